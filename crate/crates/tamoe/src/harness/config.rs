//! Flat key-value experiment configuration.
//!
//! Every default named by the training recipe lives here; a config file is
//! a flat TOML table overriding whichever keys it mentions. Unknown keys
//! are rejected so typos surface as usage errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelFamily};
use crate::text::EmbeddingMode;
use crate::training::TrainSchedule;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // experiment
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model_family: String,
    /// "pretrained-frozen" or "task-specific".
    pub embedding_mode: String,
    /// Word-vector file; relative paths resolve against dataset_dir.
    pub embedding_file: PathBuf,
    pub seed: u64,
    pub min_count: usize,
    /// Probability that an item's activity label is swapped for another
    /// (simulates an imperfect upstream activity classifier).
    pub label_noise: f64,

    // topic feature ablation
    #[serde(default = "default_true")]
    pub use_video_features: bool,
    #[serde(default = "default_true")]
    pub use_label_embedding: bool,
    #[serde(default = "default_true")]
    pub use_tfidf_embedding: bool,

    // model
    pub feature_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub expert_count: usize,
    pub expert_dim: usize,
    pub gate_hidden: usize,
    pub temperature: f64,
    pub dropout: f64,
    pub max_features: usize,
    pub max_caption_len: usize,

    // training
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_halving: f64,
    pub ss_start: f64,
    pub ss_floor: f64,
    /// 0 disables gradient clipping.
    pub clip_norm: f64,
    pub rho: f64,
    pub epsilon: f64,

    // decoding
    pub beam_size: usize,
    pub length_normalize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_dir: PathBuf::from("."),
            out_dir: PathBuf::from("run"),
            model_family: "tamoe".into(),
            embedding_mode: "pretrained-frozen".into(),
            embedding_file: PathBuf::from("embeddings.vec"),
            seed: 0,
            min_count: 1,
            label_noise: 0.0,
            use_video_features: true,
            use_label_embedding: true,
            use_tfidf_embedding: true,
            feature_dim: 1024,
            encoder_hidden: 512,
            decoder_hidden: 1024,
            embedding_dim: 300,
            attention_dim: 512,
            expert_count: 8,
            expert_dim: 256,
            gate_hidden: 512,
            temperature: 1.0,
            dropout: 0.5,
            max_features: 200,
            max_caption_len: 32,
            batch_size: 64,
            max_epochs: 100,
            patience: 4,
            lr_halving: 0.5,
            ss_start: 1.0,
            ss_floor: 0.75,
            clip_norm: 5.0,
            rho: 0.95,
            epsilon: 1e-6,
            beam_size: 5,
            length_normalize: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!(
            "bad config {}: {e}",
            path.display()
        )))
    }

    pub fn family(&self) -> Result<ModelFamily> {
        self.model_family.parse()
    }

    pub fn embedding_mode(&self) -> Result<EmbeddingMode> {
        match self.embedding_mode.as_str() {
            "pretrained-frozen" => Ok(EmbeddingMode::PretrainedFrozen),
            "task-specific" => Ok(EmbeddingMode::TaskSpecific),
            other => Err(Error::Usage(format!("unknown embedding mode '{other}'"))),
        }
    }

    /// Model config with the single-expert coercion the baseline families
    /// imply.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let family = self.family()?;
        let expert_count = if family == ModelFamily::Tamoe {
            self.expert_count
        } else {
            1
        };
        let cfg = ModelConfig {
            family,
            feature_dim: self.feature_dim,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            embedding_dim: self.embedding_dim,
            attention_dim: self.attention_dim,
            expert_count,
            expert_dim: self.expert_dim,
            gate_hidden: self.gate_hidden,
            temperature: self.temperature,
            dropout: self.dropout,
            max_features: self.max_features,
            max_caption_len: self.max_caption_len,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<TrainSchedule> {
        let schedule = TrainSchedule {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr_halving: self.lr_halving,
            ss_start: self.ss_start,
            ss_floor: self.ss_floor,
            clip_norm: if self.clip_norm > 0.0 {
                Some(self.clip_norm)
            } else {
                None
            },
            rho: self.rho,
            epsilon: self.epsilon,
            seed: self.seed,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn embedding_path(&self) -> PathBuf {
        if self.embedding_file.is_absolute() {
            self.embedding_file.clone()
        } else {
            self.dataset_dir.join(&self.embedding_file)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_named_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.encoder_hidden, 512);
        assert_eq!(c.decoder_hidden, 1024);
        assert_eq!(c.embedding_dim, 300);
        assert_eq!(c.expert_count, 8);
        assert_eq!(c.expert_dim, 256);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.max_epochs, 100);
        assert_eq!(c.patience, 4);
        assert_eq!(c.beam_size, 5);
        assert_eq!(c.max_features, 200);
        assert_eq!(c.max_caption_len, 32);
        assert!((c.dropout - 0.5).abs() < 1e-12);
        assert!((c.ss_floor - 0.75).abs() < 1e-12);
        assert!((c.clip_norm - 5.0).abs() < 1e-12);
        assert!((c.rho - 0.95).abs() < 1e-12);
        assert!((c.epsilon - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn flat_file_overrides_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "model_family = \"base\"\nexpert_count = 4\nseed = 7\n").unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.model_family, "base");
        assert_eq!(c.seed, 7);
        // base family coerces to one expert
        assert_eq!(c.model_config().unwrap().expert_count, 1);

        std::fs::write(&path, "no_such_key = 3\n").unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn clip_zero_disables_clipping() {
        let mut c = ExperimentConfig::default();
        c.clip_norm = 0.0;
        assert_eq!(c.schedule().unwrap().clip_norm, None);
    }
}
