//! Alternating adversarial optimisation: per step, `critic_iters` updates
//! of both critics on a detached fused batch, then `generator_iters`
//! generator updates against `L_G = L_content + L_adv`.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{shuffled_indices, PatchSet};
use crate::discriminator::{Critic, CriticSpec};
use crate::error::{FusionError, Result};
use crate::generator::{Generator, GeneratorSpec};
use crate::losses::{
    adversarial_loss_with_grad, content_loss_with_grad, critic_loss_with_grad, ContentConfig,
    LossBreakdown, PenaltyConfig,
};
use crate::optim::{Adam, AdamConfig};
use crate::params::Params;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const HISTORY_LEN: usize = 256;
pub const LOSS_CSV: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub generator_iters: usize,
    pub critic_iters: usize,
    pub penalty: PenaltyConfig,
    pub content: ContentConfig,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Steps between progress lines; 0 disables them.
    pub log_every: u64,
    /// Stops early once this many steps have run in total.
    pub max_steps: Option<u64>,
    pub device: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 16,
            lr_generator: 1e-4,
            lr_critic: 4e-4,
            generator_iters: 1,
            critic_iters: 2,
            penalty: PenaltyConfig::default(),
            content: ContentConfig::default(),
            seed: 0,
            checkpoint_every: 1000,
            log_every: 50,
            max_steps: None,
            device: "cpu".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FusionError::Config(m.into()));
        if self.batch_size == 0 || self.epochs == 0 || self.generator_iters == 0 || self.critic_iters == 0 {
            return bad("batch size, epochs and iteration counts must be positive");
        }
        if !(self.lr_generator >= 0.0 && self.lr_critic >= 0.0)
            || !self.lr_generator.is_finite()
            || !self.lr_critic.is_finite()
        {
            return bad("learning rates must be finite and non-negative");
        }
        if self.device != "cpu" {
            return Err(FusionError::Config(format!(
                "device `{}` is not available (only `cpu`)",
                self.device
            )));
        }
        self.penalty.validate()
    }

    pub fn steps_per_epoch(&self, patches: usize) -> usize {
        patches / self.batch_size
    }

    /// `epochs · ⌊patches / batch⌋`, capped by `max_steps`.
    pub fn total_steps(&self, patches: usize) -> u64 {
        let full = (self.epochs * self.steps_per_epoch(patches)) as u64;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub critic_ir: Critic<f32>,
    pub critic_vis: Critic<f32>,
    pub adam_generator: Adam<f32>,
    pub adam_ir: Adam<f32>,
    pub adam_vis: Adam<f32>,
    pub step: u64,
    pub epoch: u64,
    /// Next batch index within the current epoch.
    pub cursor: u64,
    pub rng: ChaCha8Rng,
    pub history: VecDeque<LossBreakdown>,
}

impl TrainState {
    pub fn new(config: TrainConfig, gen_spec: GeneratorSpec, critic_spec: CriticSpec) -> Result<Self> {
        config.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(gen_spec, master.next_u64())?;
        let critic_ir = Critic::new(critic_spec.clone(), master.next_u64())?;
        let critic_vis = Critic::new(critic_spec, master.next_u64())?;
        let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let g = AdamConfig::with_lr(config.lr_generator);
        let d = AdamConfig::with_lr(config.lr_critic);
        Ok(Self {
            adam_generator: Adam::new(g, &generator.params),
            adam_ir: Adam::new(d, &critic_ir.params),
            adam_vis: Adam::new(d, &critic_vis.params),
            generator,
            critic_ir,
            critic_vis,
            config,
            step: 0,
            epoch: 0,
            cursor: 0,
            rng,
            history: VecDeque::with_capacity(HISTORY_LEN),
        })
    }

    /// Digest over generator and both critics.
    pub fn param_hash(&self) -> String {
        let mut all = Params::new();
        all.extend_prefixed("generator", &self.generator.params);
        all.extend_prefixed("critic_ir", &self.critic_ir.params);
        all.extend_prefixed("critic_vis", &self.critic_vis.params);
        all.digest()
    }

    fn record(&mut self, row: LossBreakdown) {
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(row);
    }
}

/// One update of `critic` on `(fused, real)`; returns `(loss, penalty)`.
fn critic_update(
    critic: &mut Critic<f32>,
    adam: &mut Adam<f32>,
    fused: &Tensor<f32>,
    real: &Tensor<f32>,
    cfg: &PenaltyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f32, f32)> {
    let eps: Vec<f32> = (0..fused.batch()).map(|_| rng.random::<f32>()).collect();
    let e = critic_loss_with_grad(critic, fused, real, &eps, cfg)?;
    adam.update(&mut critic.params, &e.grads)?;
    Ok((e.loss, e.penalty))
}

/// Runs one outer step on a normalized batch. `ids` name the patches and
/// are reported if any loss turns non-finite.
pub fn train_step(
    state: &mut TrainState,
    ir: &Tensor<f32>,
    vis: &Tensor<f32>,
    ids: &[String],
) -> Result<LossBreakdown> {
    let cfg = state.config.clone();
    let n = ir.batch();
    if n == 0 || vis.shape() != ir.shape() {
        return Err(FusionError::dim("train step needs equally shaped, non-empty batches"));
    }
    let step = state.step + 1;
    let abort = |what: &str| {
        FusionError::Numerical(format!(
            "non-finite {what} at step {step}; batch: [{}]",
            ids.join(", ")
        ))
    };

    let fused = state.generator.forward(ir, vis)?;
    let (mut l_d_ir, mut l_d_vis, mut gp_ir, mut gp_vis) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..cfg.critic_iters {
        (l_d_ir, gp_ir) = critic_update(
            &mut state.critic_ir,
            &mut state.adam_ir,
            &fused,
            ir,
            &cfg.penalty,
            &mut state.rng,
        )?;
        (l_d_vis, gp_vis) = critic_update(
            &mut state.critic_vis,
            &mut state.adam_vis,
            &fused,
            vis,
            &cfg.penalty,
            &mut state.rng,
        )?;
        if !(l_d_ir.is_finite() && l_d_vis.is_finite()) {
            return Err(abort("critic loss"));
        }
    }

    let (mut l_content, mut l_adv) = (0.0, 0.0);
    for _ in 0..cfg.generator_iters {
        let mut tape = Tape::new();
        let bound = state.generator.params.bind(&mut tape);
        let (iv, vv) = (tape.constant(ir.clone()), tape.constant(vis.clone()));
        let out = state.generator.forward_var(&mut tape, &bound, iv, vv)?;
        let f = tape.value(out).clone();

        let (lc, mut seed) = content_loss_with_grad(&f, ir, vis, &cfg.content)?;
        let (la, adv_grad) = adversarial_loss_with_grad(&state.critic_ir, &state.critic_vis, &f)?;
        seed.add_assign(&adv_grad);
        l_content = lc;
        l_adv = la;
        if !(l_content.is_finite() && l_adv.is_finite()) {
            return Err(abort("generator loss"));
        }

        let mut grads = tape.backward(out, seed)?;
        let g = bound.gradients(&tape, &mut grads);
        state.adam_generator.update(&mut state.generator.params, &g)?;
    }

    state.step += 1;
    let row = LossBreakdown {
        step: state.step,
        l_g: l_content + l_adv,
        l_content,
        l_adv,
        l_d_ir,
        l_d_vis,
        gp_ir,
        gp_vis,
    };
    if !row.all_finite() {
        return Err(abort("loss"));
    }
    state.record(row);
    Ok(row)
}

/// Where a run writes its artefacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of initialising.
    pub resume: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Rows produced by this invocation.
    pub losses: Vec<LossBreakdown>,
    pub checkpoint: Option<PathBuf>,
}

/// Keeps the first `keep` data rows of an existing loss CSV (for resume).
fn open_loss_csv(path: &Path, keep: u64) -> Result<File> {
    let mut kept = Vec::new();
    if keep > 0 && path.exists() {
        let f = File::open(path).map_err(|e| FusionError::io(path, e))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| FusionError::io(path, e))?;
            let row = LossBreakdown::parse_csv_row(&line)?;
            if row.step <= keep {
                kept.push(line);
            }
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(|e| FusionError::io(path, e))?;
    writeln!(f, "{}", LossBreakdown::CSV_HEADER).map_err(|e| FusionError::io(path, e))?;
    for l in kept {
        writeln!(f, "{l}").map_err(|e| FusionError::io(path, e))?;
    }
    Ok(f)
}

/// Trains for `epochs · ⌊N/batch⌋` steps (or `max_steps`). Each epoch visits
/// the patches in a fresh seeded order; a trailing partial batch is dropped.
pub fn train(
    config: &TrainConfig,
    gen_spec: &GeneratorSpec,
    critic_spec: &CriticSpec,
    data: &PatchSet,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut state = match &opts.resume {
        Some(p) => {
            // Run-length and logging settings come from the caller; the
            // optimisation settings stay as checkpointed.
            let mut s = checkpoint::load_checkpoint(p)?;
            s.config.epochs = config.epochs;
            s.config.max_steps = config.max_steps;
            s.config.checkpoint_every = config.checkpoint_every;
            s.config.log_every = config.log_every;
            if s.config != *config {
                log::warn!("resuming with the optimisation settings stored in {}", p.display());
            }
            s
        }
        None => TrainState::new(config.clone(), gen_spec.clone(), critic_spec.clone())?,
    };
    let cfg = state.config.clone();
    let per_epoch = cfg.steps_per_epoch(data.len()) as u64;
    if per_epoch == 0 {
        return Err(FusionError::Data(format!(
            "{} patches cannot fill a batch of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let total = cfg.total_steps(data.len());

    let mut csv = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
            Some((open_loss_csv(&dir.join(LOSS_CSV), state.step)?, dir.join(LOSS_CSV)))
        }
        None => None,
    };
    let ckpt_path = opts.out_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE));

    let b = cfg.batch_size;
    let mut losses = Vec::new();
    'outer: while (state.epoch as usize) < cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, state.epoch);
        while state.cursor < per_epoch {
            if state.step >= total {
                break 'outer;
            }
            let start = state.cursor as usize * b;
            let idx = &order[start..start + b];
            let (ir, vis) = data.batch::<f32>(idx)?;
            let ids: Vec<String> = idx.iter().map(|&i| data.identifier(i).to_string()).collect();
            let row = train_step(&mut state, &ir, &vis, &ids)?;
            state.cursor += 1;
            if let Some((f, p)) = csv.as_mut() {
                writeln!(f, "{row}").map_err(|e| FusionError::io(&*p, e))?;
            }
            if cfg.log_every > 0 && state.step % cfg.log_every == 0 {
                log::info!(
                    "step {}/{} epoch {} l_g {:.5} l_content {:.5} l_d_ir {:.5} l_d_vis {:.5}",
                    state.step,
                    total,
                    state.epoch + 1,
                    row.l_g,
                    row.l_content,
                    row.l_d_ir,
                    row.l_d_vis
                );
            }
            losses.push(row);
            if let Some(p) = &ckpt_path {
                if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                    checkpoint::save_checkpoint(&state, p)?;
                }
            }
        }
        state.epoch += 1;
        state.cursor = 0;
    }
    if let Some(p) = &ckpt_path {
        checkpoint::save_checkpoint(&state, p)?;
    }
    Ok(TrainOutcome {
        state,
        losses,
        checkpoint: ckpt_path,
    })
}
