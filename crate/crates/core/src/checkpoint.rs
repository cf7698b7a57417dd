//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 8            | magic `ICAFCKPT`                          |
//! | 4            | `u32` format version                      |
//! | 8            | `u64` header length `L`                   |
//! | `L`          | UTF-8 JSON header                         |
//! | `4·Σ sizes`  | `f32` arrays in header order              |
//! | 32           | SHA-256 of every preceding byte           |
//!
//! Array names are namespaced `generator.*`, `critic_ir.*`, `critic_vis.*`,
//! `adam.<net>.{m,v}.*` and `history.values`.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::{Critic, CriticSpec};
use crate::error::{FusionError, Result};
use crate::generator::{Generator, GeneratorSpec};
use crate::losses::LossBreakdown;
use crate::optim::{Adam, AdamConfig};
use crate::params::Params;
use crate::tensor::Tensor;
use crate::trainer::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"ICAFCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const HASH_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 4],
}

/// JSON header of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub generator_spec: GeneratorSpec,
    pub generator_parameter_count: usize,
    pub critic_spec: CriticSpec,
    pub train_config: TrainConfig,
    pub step: u64,
    pub epoch: u64,
    pub cursor: u64,
    /// Digest of generator and critic parameters (see [`TrainState::param_hash`]).
    pub param_hash: String,
    rng: RngState,
    adam_steps: [u64; 3],
    history_steps: Vec<u64>,
    arrays: Vec<ArrayEntry>,
}

const NETS: [&str; 3] = ["generator", "critic_ir", "critic_vis"];

fn collect_arrays(state: &TrainState) -> Params<f32> {
    let mut all = Params::new();
    all.extend_prefixed("generator", &state.generator.params);
    all.extend_prefixed("critic_ir", &state.critic_ir.params);
    all.extend_prefixed("critic_vis", &state.critic_vis.params);
    for (net, adam) in NETS
        .iter()
        .zip([&state.adam_generator, &state.adam_ir, &state.adam_vis])
    {
        all.extend_prefixed(&format!("adam.{net}.m"), &adam.m);
        all.extend_prefixed(&format!("adam.{net}.v"), &adam.v);
    }
    let values: Vec<f32> = state
        .history
        .iter()
        .flat_map(|r| [r.l_g, r.l_content, r.l_adv, r.l_d_ir, r.l_d_vis, r.gp_ir, r.gp_vis])
        .collect();
    let len = state.history.len();
    all.insert(
        "history.values",
        Tensor::from_vec([1, 1, len, 7], values).expect("seven values per row"),
    );
    all
}

/// Serialises `state` to bytes.
pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let arrays = collect_arrays(state);
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        generator_spec: state.generator.spec.clone(),
        generator_parameter_count: state.generator.params.scalar_count(),
        critic_spec: state.critic_ir.spec.clone(),
        train_config: state.config.clone(),
        step: state.step,
        epoch: state.epoch,
        cursor: state.cursor,
        param_hash: state.param_hash(),
        rng: RngState {
            seed: hex::encode(state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        adam_steps: [state.adam_generator.step, state.adam_ir.step, state.adam_vis.step],
        history_steps: state.history.iter().map(|r| r.step).collect(),
        arrays: arrays
            .iter()
            .map(|(name, t)| ArrayEntry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| FusionError::Integrity(format!("header serialisation failed: {e}")))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 4 * arrays.scalar_count() + HASH_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in arrays.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Reads only the header, after verifying the container.
pub fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    Ok(split(bytes)?.0)
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < PREFIX_LEN + HASH_LEN {
        return Err(FusionError::Integrity(format!(
            "file is {} bytes, shorter than the fixed container overhead",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(FusionError::Integrity("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(FusionError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let body_end = bytes.len() - HASH_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(FusionError::Integrity(
            "checksum mismatch (file truncated or corrupted)".into(),
        ));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if hlen > body_end - PREFIX_LEN {
        return Err(FusionError::Integrity("header length exceeds file".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[PREFIX_LEN..PREFIX_LEN + hlen])
        .map_err(|e| FusionError::Integrity(format!("bad header: {e}")))?;
    Ok((header, &bytes[PREFIX_LEN + hlen..body_end]))
}

/// Rebuilds a [`TrainState`] from bytes; nothing is returned unless every
/// check passes.
pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let (h, mut payload) = split(bytes)?;
    let mut all = Params::new();
    for e in &h.arrays {
        let n: usize = e.shape.iter().product();
        if payload.len() < 4 * n {
            return Err(FusionError::Integrity(format!("array `{}` is truncated", e.name)));
        }
        let data = payload[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        payload = &payload[4 * n..];
        all.insert(e.name.clone(), Tensor::from_vec(e.shape, data)?);
    }
    if !payload.is_empty() {
        return Err(FusionError::Integrity(format!(
            "{} unexpected trailing bytes",
            payload.len()
        )));
    }
    let integrity = |e: FusionError| FusionError::Integrity(e.to_string());

    let generator = Generator::from_params(h.generator_spec.clone(), all.subset("generator")).map_err(integrity)?;
    if generator.params.scalar_count() != h.generator_parameter_count
        || h.generator_spec.parameter_count() != h.generator_parameter_count
    {
        return Err(FusionError::Integrity("generator parameter count mismatch".into()));
    }
    let critic_ir = Critic::from_params(h.critic_spec.clone(), all.subset("critic_ir")).map_err(integrity)?;
    let critic_vis = Critic::from_params(h.critic_spec.clone(), all.subset("critic_vis")).map_err(integrity)?;

    let adam = |net: &str, lr: f64, step: u64, params: &Params<f32>| -> Result<Adam<f32>> {
        let m = all.subset(&format!("adam.{net}.m"));
        let v = all.subset(&format!("adam.{net}.v"));
        for (name, p) in params.iter() {
            for store in [&m, &v] {
                if store.get(name).map_err(integrity)?.shape() != p.shape() {
                    return Err(FusionError::Integrity(format!("moment shape of `{name}` differs")));
                }
            }
        }
        Ok(Adam {
            config: AdamConfig::with_lr(lr),
            step,
            m,
            v,
        })
    };
    let cfg = &h.train_config;
    let adam_generator = adam("generator", cfg.lr_generator, h.adam_steps[0], &generator.params)?;
    let adam_ir = adam("critic_ir", cfg.lr_critic, h.adam_steps[1], &critic_ir.params)?;
    let adam_vis = adam("critic_vis", cfg.lr_critic, h.adam_steps[2], &critic_vis.params)?;

    let values = all.get("history.values").map_err(integrity)?;
    if values.shape() != [1, 1, h.history_steps.len(), 7] {
        return Err(FusionError::Integrity("loss history shape mismatch".into()));
    }
    let history: VecDeque<LossBreakdown> = h
        .history_steps
        .iter()
        .zip(values.data().chunks_exact(7))
        .map(|(&step, v)| LossBreakdown {
            step,
            l_g: v[0],
            l_content: v[1],
            l_adv: v[2],
            l_d_ir: v[3],
            l_d_vis: v[4],
            gp_ir: v[5],
            gp_vis: v[6],
        })
        .collect();

    let seed_bytes: [u8; 32] = hex::decode(&h.rng.seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| FusionError::Integrity("bad generator seed".into()))?;
    let word_pos: u128 = h
        .rng
        .word_pos
        .parse()
        .map_err(|_| FusionError::Integrity("bad generator position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);
    rng.set_stream(h.rng.stream);
    rng.set_word_pos(word_pos);

    let state = TrainState {
        config: h.train_config.clone(),
        generator,
        critic_ir,
        critic_vis,
        adam_generator,
        adam_ir,
        adam_vis,
        step: h.step,
        epoch: h.epoch,
        cursor: h.cursor,
        rng,
        history,
    };
    let recomputed = state.param_hash();
    if recomputed != h.param_hash {
        return Err(FusionError::Integrity(format!(
            "parameter hash {recomputed} does not match recorded {}",
            h.param_hash
        )));
    }
    Ok(state)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| FusionError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FusionError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode(&fs::read(path).map_err(|e| FusionError::io(path, e))?)
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    decode_header(&fs::read(path).map_err(|e| FusionError::io(path, e))?)
}
