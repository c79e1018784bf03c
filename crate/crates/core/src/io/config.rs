//! JSON run configuration for the `train` command.
//!
//! Every key is optional; unknown keys are rejected. Defaults:
//!
//! | key | default |
//! |---|---|
//! | `variant` | `"sviptr-v2-t"` unless `channels`, `depths`, `heads` and `permutation` are all given |
//! | `channels`, `depths`, `heads`, `permutation` | taken from `variant` |
//! | `pe_kind` | `"lepe"` |
//! | `dropout` | `0.1` |
//! | `alphabet_path` | lowercase letters and digits |
//! | `seed` | `0`, overridden by the `VIPTR_SEED` environment variable |
//! | `input_height` | `32` (the only height the synthetic corpus renders) |
//! | `input_width` | `96` |
//! | `optimizer` | see [`OptimHyper`] |
//! | `data` | see [`DataConfig`] |
//! | `out_dir` | `"runs/latest"` |
//! | `stop_at_accuracy` | none |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::PeKind;
use crate::backbone::{parse_permutation, VariantConfig};
use crate::ctc::Alphabet;
use crate::error::{config_err, Error, Result};
use crate::train::{OptimHyper, SynthSpec, TrainConfig, IMAGE_HEIGHT};

pub const SEED_ENV: &str = "VIPTR_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Option<String>,
    pub channels: Option<[usize; 4]>,
    pub depths: Option<[usize; 4]>,
    pub heads: Option<[usize; 4]>,
    pub permutation: Option<String>,
    pub pe_kind: Option<PeKind>,
    pub dropout: Option<f64>,
    pub alphabet_path: Option<PathBuf>,
    pub seed: u64,
    pub input_height: Option<usize>,
    pub input_width: Option<usize>,
    pub optimizer: OptimHyper,
    pub data: DataConfig,
    pub out_dir: Option<PathBuf>,
    pub stop_at_accuracy: Option<f64>,
}

/// Size and rendering of the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_samples: usize,
    pub val_samples: usize,
    pub shuffle: bool,
    pub min_len: usize,
    pub max_len: usize,
    pub scales: (usize, usize),
    pub jitter: usize,
    pub noise: f64,
    pub glyph_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            train_samples: 5000,
            val_samples: 500,
            shuffle: true,
            min_len: s.min_len,
            max_len: s.max_len,
            scales: s.scales,
            jitter: s.jitter,
            noise: s.noise,
            glyph_seed: s.glyph_seed,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| config_err!("{}: {e}", path.display()))
    }

    /// The model architecture described by the config.
    pub fn variant_config(&self, num_classes: usize) -> Result<VariantConfig> {
        let mut cfg = match (&self.variant, self.channels, self.depths, self.heads, &self.permutation) {
            (Some(v), ..) => VariantConfig::variant(v)?,
            (None, Some(c), Some(d), Some(h), Some(p)) => VariantConfig::new(c, d, h, p)?,
            (None, None, None, None, None) => VariantConfig::variant("sviptr-v2-t")?,
            _ => {
                return Err(config_err!(
                    "without 'variant', all of channels, depths, heads and permutation are required"
                ))
            }
        };
        if let Some(c) = self.channels {
            cfg.channels = c;
        }
        if let Some(d) = self.depths {
            cfg.depths = d;
        }
        if let Some(h) = self.heads {
            cfg.heads = h;
        }
        if let Some(p) = &self.permutation {
            cfg.permutation = parse_permutation(p)?;
        }
        if let Some(pe) = self.pe_kind {
            cfg.pe_kind = pe;
        }
        if let Some(d) = self.dropout {
            cfg.dropout = d;
        }
        cfg.num_classes = num_classes;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves defaults, reads the alphabet and applies `seed_override`.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<TrainConfig> {
        let alphabet = match &self.alphabet_path {
            Some(p) => Alphabet::load(p)?,
            None => Alphabet::english(),
        };
        let height = self.input_height.unwrap_or(IMAGE_HEIGHT);
        if height != IMAGE_HEIGHT {
            return Err(config_err!("input_height must be {IMAGE_HEIGHT} for the synthetic corpus, got {height}"));
        }
        if let Some(a) = self.stop_at_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(config_err!("stop_at_accuracy {a} outside [0, 1]"));
            }
        }
        let d = &self.data;
        let synth = SynthSpec {
            width: self.input_width.unwrap_or(96),
            min_len: d.min_len,
            max_len: d.max_len,
            scales: d.scales,
            jitter: d.jitter,
            noise: d.noise,
            glyph_seed: d.glyph_seed,
        };
        synth.validate()?;
        self.optimizer.validate()?;
        Ok(TrainConfig {
            model: self.variant_config(alphabet.num_classes())?,
            alphabet,
            synth,
            train_samples: d.train_samples,
            val_samples: d.val_samples,
            shuffle: d.shuffle,
            hyper: self.optimizer.clone(),
            seed: seed_override.unwrap_or(self.seed),
            stop_at_accuracy: self.stop_at_accuracy,
            out_dir: Some(self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/latest"))),
        })
    }
}

/// The `VIPTR_SEED` override, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_err!("{SEED_ENV}='{v}' is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse(r#"{"variant":"sviptr-v1-t","colour":1}"#).is_err());
        assert!(RunConfig::parse(r#"{"optimizer":{"learning_rate":1}}"#).is_err());
    }

    #[test]
    fn empty_config_resolves_to_defaults() {
        let t = RunConfig::parse("{}").unwrap().resolve(None).unwrap();
        assert_eq!(t.model.channels, [64, 128, 256, 192]);
        assert_eq!(t.model.num_classes, 37);
        assert_eq!(t.seed, 0);
        assert_eq!(t.train_samples, 5000);
        assert_eq!(t.hyper.batch_size, 32);
    }

    #[test]
    fn explicit_architecture_and_seed_override() {
        let r = RunConfig::parse(
            r#"{"channels":[16,32,64,48],"depths":[1,1,1,1],"heads":[1,2,2,2],
                "permutation":"[L1][L1//G2][G1]","pe_kind":"cpe","seed":3}"#,
        )
        .unwrap();
        let t = r.resolve(Some(9)).unwrap();
        assert_eq!(t.model.channels, [16, 32, 64, 48]);
        assert_eq!(t.model.pe_kind, PeKind::Cpe);
        assert_eq!(t.seed, 9);
        let partial = RunConfig::parse(r#"{"channels":[16,32,64,48]}"#).unwrap();
        assert!(partial.resolve(None).is_err());
    }
}
