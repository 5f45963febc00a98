//! Flat JSON run configuration. Every key is optional; see [`Config::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{Mode, Scoring};
use crate::encoder::EncoderDims;
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::synthetic::SyntheticSpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mode: Mode,
    pub scoring: Scoring,
    pub superbag_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub na_ratio: f64,
    pub freeze_word_emb: bool,
    pub threads: usize,
    /// 0 disables the cap.
    pub max_bag_size: usize,
    pub keep_prob: f64,

    pub word_dim: usize,
    pub pos_dim: usize,
    pub window: usize,
    pub filters: usize,
    pub clip: usize,
    pub max_len: usize,

    pub exclude_train_pairs: bool,

    pub synth_relations: usize,
    pub synth_vocab_size: usize,
    pub synth_triggers_per_relation: usize,
    pub synth_sentences_per_bag: usize,
    pub synth_bags_per_relation: usize,
    pub synth_test_bags_per_relation: usize,
    pub synth_sentence_noise: f64,
    pub synth_noisy_bag_rate: f64,
    pub synth_min_len: usize,
    pub synth_max_len: usize,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SyntheticSpec::default();
        Config {
            mode: t.mode,
            scoring: t.scoring,
            superbag_size: t.superbag_size,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            seed: t.seed,
            na_ratio: t.na_ratio,
            freeze_word_emb: t.freeze_word_emb,
            threads: t.threads,
            max_bag_size: 20,
            keep_prob: 0.5,
            word_dim: 50,
            pos_dim: 5,
            window: 3,
            filters: 230,
            clip: 30,
            max_len: 120,
            exclude_train_pairs: false,
            synth_relations: s.relations,
            synth_vocab_size: s.vocab_size,
            synth_triggers_per_relation: s.triggers_per_relation,
            synth_sentences_per_bag: s.sentences_per_bag,
            synth_bags_per_relation: s.bags_per_relation,
            synth_test_bags_per_relation: s.test_bags_per_relation,
            synth_sentence_noise: s.sentence_noise,
            synth_noisy_bag_rate: s.noisy_bag_rate,
            synth_min_len: s.min_len,
            synth_max_len: s.max_len,
        }
    }
}

impl Config {
    /// Parses a JSON object; blank input means all defaults. Errors name the key.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Config::default());
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("key `{path}`: {inner}"))
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Compact single-line JSON with keys in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "key `keep_prob`: {} not in (0, 1]",
                self.keep_prob
            )));
        }
        for (key, v) in [
            ("word_dim", self.word_dim),
            ("window", self.window),
            ("filters", self.filters),
            ("max_len", self.max_len),
            ("threads", self.threads),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("key `{key}` must be positive")));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            scoring: self.scoring,
            superbag_size: self.superbag_size,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            seed: self.seed,
            na_ratio: self.na_ratio,
            freeze_word_emb: self.freeze_word_emb,
            threads: self.threads,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            relations: self.synth_relations,
            vocab_size: self.synth_vocab_size,
            triggers_per_relation: self.synth_triggers_per_relation,
            sentences_per_bag: self.synth_sentences_per_bag,
            bags_per_relation: self.synth_bags_per_relation,
            test_bags_per_relation: self.synth_test_bags_per_relation,
            sentence_noise: self.synth_sentence_noise,
            noisy_bag_rate: self.synth_noisy_bag_rate,
            min_len: self.synth_min_len,
            max_len: self.synth_max_len,
            clip: self.clip,
            seed: self.seed,
        }
    }

    pub fn model_dims(&self, vocab: usize, relations: usize) -> ModelDims {
        ModelDims {
            encoder: EncoderDims {
                vocab,
                word_dim: self.word_dim,
                pos_dim: self.pos_dim,
                window: self.window,
                filters: self.filters,
                clip: self.clip,
            },
            relations,
        }
    }
}
