//! Plain-text persistence of trained step sizes.
//!
//! ```text
//! # uwmmse step sizes
//! format_version = 1
//! layers = 2
//! pgd_steps = 3
//! snr_db = 10
//! seed = 7
//! training_samples = 2000000
//! tied = false
//! layer.0 = 4.2767081942647880e-1 1.0086818487221894e1 ...
//! layer.1 = ...
//! end = true
//! ```
//!
//! Values carry 17 significant digits so a save/load cycle is exact. The
//! trailing `end` line lets a truncated file be told apart from a short grid.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::parse_key_values;
use crate::error::{Error, Result};
use crate::unfolded::{StepSizes, UnfoldConfig};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeArtifact {
    pub steps: StepSizes,
    pub snr_db: f64,
    pub seed: u64,
    /// Channels seen during training, over all stages.
    pub training_samples: u64,
    pub tied: bool,
}

impl StepSizeArtifact {
    pub fn unfold_config(&self) -> UnfoldConfig {
        UnfoldConfig {
            layers: self.steps.layers(),
            pgd_steps: self.steps.steps(),
            tie_within_layer: self.tied,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# uwmmse step sizes\n");
        let (layers, steps) = self.steps.shape();
        let _ = writeln!(s, "format_version = {ARTIFACT_VERSION}");
        let _ = writeln!(s, "layers = {layers}");
        let _ = writeln!(s, "pgd_steps = {steps}");
        let _ = writeln!(s, "snr_db = {:.16e}", self.snr_db);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "training_samples = {}", self.training_samples);
        let _ = writeln!(s, "tied = {}", self.tied);
        for l in 0..layers {
            let row: Vec<String> = self.steps.row(l).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "layer.{l} = {}", row.join(" "));
        }
        s.push_str("end = true\n");
        s
    }

    /// Parses the text produced by [`Self::to_text`]; `path` only labels errors.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptArtifact {
            path: path.to_path_buf(),
            reason,
        };
        let pairs = parse_key_values(text).map_err(|e| corrupt(e.to_string()))?;
        let map: HashMap<&str, &str> = pairs.iter().map(|(_, k, v)| (k.as_str(), v.as_str())).collect();
        if map.len() != pairs.len() {
            return Err(corrupt("duplicate key".into()));
        }
        let get = |key: &str| map.get(key).copied().ok_or_else(|| corrupt(format!("missing `{key}`")));
        fn parse<T: std::str::FromStr>(key: &str, raw: &str, path: &Path) -> Result<T> {
            raw.parse().map_err(|_| Error::CorruptArtifact {
                path: path.to_path_buf(),
                reason: format!("bad value for `{key}`: {raw:?}"),
            })
        }

        let version: u32 = parse("format_version", get("format_version")?, path)?;
        if version != ARTIFACT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: ARTIFACT_VERSION,
            });
        }
        if get("end")? != "true" {
            return Err(corrupt("bad end marker".into()));
        }
        let layers: usize = parse("layers", get("layers")?, path)?;
        let steps: usize = parse("pgd_steps", get("pgd_steps")?, path)?;
        let mut values = Vec::with_capacity(layers * steps);
        for l in 0..layers {
            let key = format!("layer.{l}");
            let row = get(&key)?
                .split_whitespace()
                .map(|t| parse::<f64>(&key, t, path))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != steps {
                return Err(corrupt(format!("`{key}` has {} values, expected {steps}", row.len())));
            }
            values.extend(row);
        }
        if map.keys().filter(|k| k.starts_with("layer.")).count() != layers {
            return Err(corrupt("unexpected layer rows".into()));
        }
        let steps = StepSizes::from_values(layers, steps, values).map_err(|e| corrupt(e.to_string()))?;
        Ok(Self {
            steps,
            snr_db: parse("snr_db", get("snr_db")?, path)?,
            seed: parse("seed", get("seed")?, path)?,
            training_samples: parse("training_samples", get("training_samples")?, path)?,
            tied: parse("tied", get("tied")?, path)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }

    /// Loads and checks the grid shape against the network it will drive.
    pub fn load_for(path: impl AsRef<Path>, ucfg: &UnfoldConfig) -> Result<Self> {
        let art = Self::load(path)?;
        art.steps.check_shape(ucfg)?;
        Ok(art)
    }
}
