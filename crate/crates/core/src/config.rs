//! Run configuration: one TOML document whose sections mirror the pipeline
//! stages, with `--section.key=value` command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_sim::{SceneConfig, SimulatorConfig};
use crate::losses::LossWeights;
use crate::reconstruct::ReconstructionConfig;
use crate::stereo::MatchParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; it drives the scene textures.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneConfig,
    pub sim: SimulatorConfig,
    pub recon: ReconstructionConfig,
    pub weights: LossWeights,
    #[serde(rename = "match")]
    pub matching: MatchParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        Self {
            seed: scene.seed,
            out_dir: PathBuf::from("out"),
            scene,
            sim: SimulatorConfig::default(),
            recon: ReconstructionConfig::default(),
            weights: LossWeights::default(),
            matching: MatchParams::default(),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string (so `--out_dir=runs/a` needs no quotes).
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    /// Builds a configuration from an optional TOML document and a list of
    /// `(dotted.key, value)` overrides applied in order.
    pub fn from_sources(document: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut root: toml::Table = match document {
            Some(text) => toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            apply_override(&mut root, key, value)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.scene.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = path
            .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)))
            .transpose()?;
        Self::from_sources(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        self.scene.validate()?;
        self.sim.validate()?;
        self.recon.validate()?;
        self.weights.validate().map_err(config)?;
        self.matching.validate().map_err(config)?;
        if self.matching.d_max >= self.scene.width {
            return Err(Error::Config(format!(
                "match.d_max {} must be below scene.width {}",
                self.matching.d_max, self.scene.width
            )));
        }
        if self.weights.window.is_multiple_of(2) {
            return Err(Error::Config("weights.window must be odd".into()));
        }
        Ok(())
    }

    /// The resolved configuration as TOML, for the run record.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::from_sources(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(
            RunConfig::from_sources(Some(&cfg.to_toml()), &[]).unwrap(),
            cfg
        );
    }

    #[test]
    fn overrides_apply_in_order() {
        let doc = "seed = 3\n[match]\nd_max = 20\n";
        let cfg = RunConfig::from_sources(
            Some(doc),
            &[
                ov("match.d_max", "12"),
                ov("weights.lambda_cc", "0"),
                ov("out_dir", "runs/a"),
                ov("scene.texture", "checker"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.matching.d_max, 12);
        assert_eq!(cfg.weights.lambda_cc, 0.0);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a"));
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.scene.seed, 3);
    }

    #[test]
    fn cross_field_checks() {
        assert!(RunConfig::from_sources(None, &[ov("match.d_max", "64")]).is_err());
        assert!(RunConfig::from_sources(None, &[ov("weights.window", "6")]).is_err());
        assert!(RunConfig::from_sources(None, &[ov("match.patch", "4")]).is_err());
        assert!(RunConfig::from_sources(None, &[ov("bogus", "1")]).is_err());
        assert!(RunConfig::from_sources(None, &[ov("seed.x", "1")]).is_err());
        assert!(RunConfig::from_sources(Some("[scene\n"), &[]).is_err());
    }
}
