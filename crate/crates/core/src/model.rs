//! The full elements-to-video model bundle: frozen video autoencoder, text
//! embedder, semantic image encoder + projection, and the diffusion
//! backbone, plus checkpoint I/O and the trainable-parameter registries.

use crate::autoencoder::{Autoencoder, AutoencoderConfig};
use crate::backbone::{Backbone, BackboneConfig};
use crate::conditioning::SpatialMode;
use crate::encoders::{EncodersConfig, SemanticEncoder, TextEmbedder, Tokenizer};
use crate::error::{Error, Result};
use crate::nn;
use candle_core::{DType, Device, Var};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub autoencoder: AutoencoderConfig,
    pub encoders: EncodersConfig,
    pub backbone: BackboneConfig,
    /// Where the spatial branch concatenates references: pixel space
    /// (encoded once) or latent space (encoded per reference).
    pub spatial_mode: SpatialMode,
    /// Frame-repeat factor for each reference.
    pub spatial_repeat: usize,
    /// Init seed for all three parameter groups.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            autoencoder: AutoencoderConfig::default(),
            encoders: EncodersConfig::default(),
            backbone: BackboneConfig::default(),
            spatial_mode: SpatialMode::BeforeVae,
            spatial_repeat: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.autoencoder.validate()?;
        self.backbone.validate()?;
        if self.backbone.latent_channels != self.autoencoder.latent_channels {
            return Err(Error::config(format!(
                "backbone expects {} latent channels but the autoencoder produces {}",
                self.backbone.latent_channels, self.autoencoder.latent_channels
            )));
        }
        if self.encoders.d_model != self.backbone.d_model {
            return Err(Error::config(format!(
                "encoder width {} does not match backbone width {}",
                self.encoders.d_model, self.backbone.d_model
            )));
        }
        if self.spatial_repeat == 0 {
            return Err(Error::config("spatial_repeat must be >= 1"));
        }
        Ok(())
    }
}

/// Which parameters train during fine-tuning. `Cross` is the adapter-style
/// set: image cross-attention blocks, patch embedding, semantic projection,
/// and the null embeddings. `Full` additionally unfreezes the whole backbone
/// and both encoders. The autoencoder is always frozen after its own
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnableSet {
    Cross,
    Full,
}

impl std::str::FromStr for LearnableSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(LearnableSet::Cross),
            "full" => Ok(LearnableSet::Full),
            other => Err(Error::config(format!("unknown learnable set {other:?}"))),
        }
    }
}

/// Which varmap a parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Vae,
    Encoders,
    Backbone,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::Vae => "vae",
            Scope::Encoders => "encoders",
            Scope::Backbone => "backbone",
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub vae: Autoencoder,
    pub tokenizer: Tokenizer,
    pub text: TextEmbedder,
    pub semantic: SemanticEncoder,
    pub backbone: Backbone,
    /// Parameters of the text embedder and semantic encoder + projection.
    pub enc_varmap: VarMap,
    device: Device,
}

impl Model {
    pub fn new(cfg: &ModelConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let vae = Autoencoder::new(&cfg.autoencoder, device, cfg.seed)?;
        let tokenizer = Tokenizer::new();
        let enc_varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&enc_varmap, DType::F32, device);
        let text = TextEmbedder::new(&cfg.encoders, tokenizer.vocab_size(), vb.pp("text"))?;
        let semantic = SemanticEncoder::new(&cfg.encoders, vb.pp("img_enc"), vb.pp("img_proj"))?;
        nn::deterministic_init(&enc_varmap, cfg.seed, &[])?;
        let backbone = Backbone::new(&cfg.backbone, device, DType::F32, cfg.seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            vae,
            tokenizer,
            text,
            semantic,
            backbone,
            enc_varmap,
            device: device.clone(),
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn varmap(&self, scope: Scope) -> &VarMap {
        match scope {
            Scope::Vae => &self.vae.varmap,
            Scope::Encoders => &self.enc_varmap,
            Scope::Backbone => &self.backbone.varmap,
        }
    }

    /// All parameters as `(scope, name)`, sorted.
    pub fn all_param_names(&self) -> Vec<(Scope, String)> {
        let mut out = Vec::new();
        for scope in [Scope::Vae, Scope::Encoders, Scope::Backbone] {
            for n in nn::param_names(self.varmap(scope)) {
                out.push((scope, n));
            }
        }
        out
    }

    /// Trainable parameter names for a learnable set.
    pub fn trainable_param_names(&self, set: LearnableSet) -> Vec<(Scope, String)> {
        self.all_param_names()
            .into_iter()
            .filter(|(scope, name)| is_trainable(set, *scope, name))
            .collect()
    }

    /// Frozen parameter names (complement of the trainable set).
    pub fn frozen_param_names(&self, set: LearnableSet) -> Vec<(Scope, String)> {
        self.all_param_names()
            .into_iter()
            .filter(|(scope, name)| !is_trainable(set, *scope, name))
            .collect()
    }

    /// Vars for the optimizer, in stable (scope, name) order.
    pub fn trainable_vars(&self, set: LearnableSet) -> Vec<Var> {
        let mut out = Vec::new();
        for (scope, name) in self.trainable_param_names(set) {
            let data = self.varmap(scope).data().lock().unwrap();
            out.push(data[&name].clone());
        }
        out
    }

    /// SHA-256 per parameter, keyed `scope::name`.
    pub fn hash_params(&self, names: &[(Scope, String)]) -> Result<HashMap<String, String>> {
        let mut out = HashMap::new();
        for (scope, name) in names {
            let h = nn::named_hashes(self.varmap(*scope), std::slice::from_ref(name))?;
            out.insert(format!("{}::{name}", scope.as_str()), h[name].clone());
        }
        Ok(out)
    }

    /// Write the three weight files plus a JSON sidecar into `dir`.
    pub fn save(&self, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for scope in [Scope::Vae, Scope::Encoders, Scope::Backbone] {
            let path = dir.join(format!("{}.safetensors", scope.as_str()));
            let tmp = path.with_extension("safetensors.tmp");
            self.varmap(scope).save(&tmp)?;
            std::fs::rename(&tmp, &path)?;
        }
        let json = serde_json::to_string_pretty(meta)?;
        let tmp = dir.join("model.json.tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, dir.join("model.json"))?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint directory.
    pub fn load(dir: &Path, device: &Device) -> Result<(Self, CheckpointMeta)> {
        let meta = Self::load_meta(dir)?;
        let mut model = Self::new(&meta.config, device)?;
        for scope in [Scope::Vae, Scope::Encoders, Scope::Backbone] {
            let path = dir.join(format!("{}.safetensors", scope.as_str()));
            match scope {
                Scope::Vae => model.vae.varmap.load(&path)?,
                Scope::Encoders => model.enc_varmap.load(&path)?,
                Scope::Backbone => model.backbone.varmap.load(&path)?,
            }
        }
        Ok((model, meta))
    }

    pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
        let raw = std::fs::read_to_string(dir.join("model.json"))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

fn is_trainable(set: LearnableSet, scope: Scope, name: &str) -> bool {
    match set {
        LearnableSet::Cross => match scope {
            Scope::Vae => false,
            Scope::Encoders => name.starts_with("img_proj."),
            Scope::Backbone => {
                name.contains("img_cross.")
                    || name.starts_with("patch_embed")
                    || name.starts_with("null.")
            }
        },
        LearnableSet::Full => scope != Scope::Vae,
    }
}

/// Sidecar describing a saved model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub config_hash: String,
    /// SHA-256 of the training corpus manifest, if trained.
    pub corpus_hash: Option<String>,
    /// "init", "pretrain" or "finetune".
    pub stage: String,
    pub step: usize,
}

impl CheckpointMeta {
    pub fn new(config: &ModelConfig, stage: &str, step: usize, corpus_hash: Option<String>) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            config_hash: nn::config_hash(config)?,
            corpus_hash,
            stage: stage.to_string(),
            step,
        })
    }
}
