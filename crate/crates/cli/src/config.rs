//! The TOML run configuration shared by `train` and `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use icafusion_core::data::{build_dataset, ImagePair, PatchSet};
use icafusion_core::discriminator::CriticSpec;
use icafusion_core::generator::{build_variant, GeneratorSpec, Variant};
use icafusion_core::synthetic::toy_pairs;
use icafusion_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Name of the configuration echo written into every output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Training data comes from exactly one of `dataset_dir` or `synthetic`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `<id>_ir.*` / `<id>_vis.*` pairs.
    pub dataset_dir: Option<PathBuf>,
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Pairs scored by `ablate`; defaults to the training pairs.
    pub eval_dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            patch_size: 128,
            patch_stride: 12,
            eval_dir: None,
            synthetic: None,
        }
    }
}

/// Generated blob/grating pairs (see `icafusion_core::synthetic`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pairs: 64,
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_widths: [usize; 4],
    pub critic_widths: [usize; 4],
    pub variant: Variant,
    /// Use the literal published form of the second interactive path.
    pub literal_second_path: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: [16, 32, 64, 128],
            critic_widths: [16, 32, 64, 128],
            variant: Variant::Full,
            literal_second_path: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    /// Write PNG plots next to the CSV outputs.
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/icafusion"),
            plots: true,
        }
    }
}

/// Values given on the command line or through `ICAFUSION_*` variables;
/// each one that is set replaces the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub device: Option<String>,
    pub dataset_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_steps: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The file at `path`, or the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.output.out_dir = d.clone();
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(d) = &o.device {
            self.train.device = d.clone();
        }
        if let Some(d) = &o.dataset_dir {
            self.data.dataset_dir = Some(d.clone());
            self.data.synthetic = None;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if let Some(m) = o.max_steps {
            self.train.max_steps = Some(m);
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        let mut spec = build_variant(self.model.variant, &GeneratorSpec::with_widths(self.model.encoder_widths));
        spec.interactive_options.literal_second_path = self.model.literal_second_path;
        spec
    }

    pub fn critic_spec(&self) -> CriticSpec {
        CriticSpec {
            widths: self.model.critic_widths,
            ..CriticSpec::for_input(self.data.patch_size, self.data.patch_size)
        }
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> CliResult {
        self.train.validate()?;
        self.generator_spec().validate()?;
        self.critic_spec().validate()?;
        if self.data.patch_size == 0 || self.data.patch_stride == 0 {
            return Err(CliError::config("patch size and stride must be positive"));
        }
        match (&self.data.dataset_dir, &self.data.synthetic) {
            (Some(_), Some(_)) => Err(CliError::config("set only one of data.dataset_dir and data.synthetic")),
            (None, None) => Err(CliError::config(
                "no training data: set data.dataset_dir (or --dataset) or a [data.synthetic] table",
            )),
            _ => Ok(()),
        }
    }

    /// Loads or generates the training pairs and cuts them into patches.
    pub fn load_data(&self) -> CliResult<PatchSet> {
        let (size, stride) = (self.data.patch_size, self.data.patch_stride);
        let set = match (&self.data.dataset_dir, &self.data.synthetic) {
            (Some(dir), _) => {
                if !dir.is_dir() {
                    return Err(CliError::data(format!("dataset directory {} does not exist", dir.display())));
                }
                build_dataset(dir, size, stride, self.train.seed)?
            }
            (None, Some(s)) => {
                let mut set = PatchSet::empty(size, stride);
                for p in toy_pairs(s.pairs, s.size, s.seed) {
                    set.push_pair(p.pair);
                }
                set
            }
            (None, None) => return Err(CliError::config("no training data configured")),
        };
        for w in &set.warnings {
            log::warn!("{w}");
        }
        if set.is_empty() {
            return Err(CliError::data(format!(
                "no {size}x{size} patches could be extracted from the training data"
            )));
        }
        Ok(set)
    }

    /// Pairs scored by `ablate`.
    pub fn eval_pairs(&self, train: &PatchSet) -> CliResult<Vec<ImagePair>> {
        match &self.data.eval_dir {
            Some(dir) => {
                if !dir.is_dir() {
                    return Err(CliError::data(format!("evaluation directory {} does not exist", dir.display())));
                }
                let listing = icafusion_core::data::list_pairs(dir)?;
                for p in &listing.unpaired {
                    log::warn!("unpaired file {} skipped", p.display());
                }
                listing
                    .pairs
                    .iter()
                    .map(|(id, ir, vis)| {
                        let mut p = icafusion_core::data::load_pair(ir, vis)?;
                        p.identifier = id.clone();
                        Ok(p)
                    })
                    .collect()
            }
            None => Ok(train.sources.clone()),
        }
    }
}
