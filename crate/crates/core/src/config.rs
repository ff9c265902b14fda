//! The JSON run file shared by the CLI subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::GeneratorConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfigFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.generator.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfigFile::parse("{}").unwrap(), RunConfigFile::default());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = RunConfigFile::parse(r#"{"train": {"epochs": 3, "variant": "depth_lift"}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.variant, crate::training::Variant::DepthLift);
        assert_eq!(cfg.train.batch_size, 16);
    }

    #[test]
    fn unknown_keys_and_syntax_errors() {
        let e = RunConfigFile::parse(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("epochz")), "{e}");
        let e = RunConfigFile::parse("{\n  \"train\": {,}\n}").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 2")), "{e}");
        let e = RunConfigFile::parse(r#"{"train": {"batch_size": 0}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
