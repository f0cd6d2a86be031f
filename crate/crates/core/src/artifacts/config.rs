//! The run configuration document: one human-readable TOML file holding
//! every knob of an experiment, with a canonical key order (struct order)
//! and a SHA-256 digest over the canonical text. Unknown keys are
//! rejected on parse.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::nets::{DiscriminatorConfig, GeneratorConfig};
use crate::objectives::LossWeights;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// "synthetic" or a directory path for image-folder ingestion.
    pub source: String,
    /// Attribute file path for folder ingestion (CelebA list layout).
    pub attr_file: Option<String>,
    pub attribute_names: Vec<String>,
    pub n_per_domain: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            attr_file: None,
            attribute_names: ["blond", "black", "brown", "gray"].map(String::from).to_vec(),
            n_per_domain: 256,
            n_test: 256,
            image_size: 32,
            data_seed: 7,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub meta: MetaConfig,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub data: DataConfig,
    /// Held-out attribute name; empty string disables the hold-out.
    pub holdout: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        let k = data.attribute_names.len();
        RunConfig {
            meta: MetaConfig::desk(),
            weights: LossWeights::default(),
            generator: GeneratorConfig::with_domains(k),
            discriminator: DiscriminatorConfig::with_domains(k),
            data,
            holdout: "brown".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        let k = self.data.attribute_names.len();
        if self.generator.n_domains != k || self.discriminator.n_domains != k {
            return Err(Error::invalid(format!(
                "net configs expect {} domains but {} attribute names are given",
                self.generator.n_domains, k
            )));
        }
        if self.generator.image_size != self.data.image_size
            || self.discriminator.image_size != self.data.image_size
        {
            return Err(Error::invalid("net image_size differs from data image_size"));
        }
        if !self.holdout.is_empty()
            && !self.data.attribute_names.iter().any(|n| n == &self.holdout)
        {
            return Err(Error::invalid(format!(
                "holdout {:?} is not one of the attributes {:?}",
                self.holdout, self.data.attribute_names
            )));
        }
        Ok(())
    }

    pub fn holdout_index(&self) -> Option<usize> {
        if self.holdout.is_empty() {
            None
        } else {
            self.data.attribute_names.iter().position(|n| n == &self.holdout)
        }
    }

    /// Canonical text: TOML in declaration order.
    pub fn canonical_text(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("config serialization failed: {e}")))
    }

    pub fn digest(&self) -> Result<[u8; 32]> {
        let text = self.canonical_text()?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        Ok(h.finalize().into())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.canonical_text()?)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_digest_stability() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.canonical_text().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest().unwrap(), back.digest().unwrap());
        // digest reacts to any change
        let mut other = cfg.clone();
        other.meta.seed += 1;
        assert_ne!(cfg.digest().unwrap(), other.digest().unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        let cfg = RunConfig::default();
        let mut text = cfg.canonical_text().unwrap();
        text.push_str("\nunknown_key = 3\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn cross_field_validation() {
        let mut cfg = RunConfig::default();
        cfg.holdout = "red".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.data.image_size = 64;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.holdout = String::new();
        cfg.validate().unwrap();
        assert_eq!(cfg.holdout_index(), None);
    }

    #[test]
    fn default_holdout_resolves() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.holdout_index(), Some(2));
    }
}
