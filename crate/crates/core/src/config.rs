//! TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{InputFormat, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::model::ModelConfig;
use crate::objective::ObjectiveSpec;
use crate::theory::CoverMethod;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw interaction file read by `prepare`.
    pub raw: Option<PathBuf>,
    pub format: InputFormat,
    /// Prepared dataset directory read by the other commands.
    pub prepared: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            raw: None,
            format: InputFormat::TsvRating,
            prepared: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub delta: f64,
    pub method: CoverMethod,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection {
            delta: 0.05,
            method: CoverMethod::Diagonal,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. When set it replaces `model.seed` with `seed` and
    /// `train.seed` with `seed + 1`.
    pub seed: Option<u64>,
    pub data: DataSection,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub objective: ObjectiveSpec,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub bound: BoundSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Parses `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.raw, &mut cfg.data.prepared]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Pushes the root seed into the model and trainer sections.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s.wrapping_add(1);
        }
    }

    /// Every range problem across all sections.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        p.extend(self.split.validate());
        p.extend(self.model.validate());
        p.extend(self.objective.validate());
        p.extend(self.train.validate());
        p.extend(self.eval.validate());
        if !(self.bound.delta > 0.0 && self.bound.delta < 1.0) {
            p.push(format!(
                "bound.delta must lie in (0, 1), got {}",
                self.bound.delta
            ));
        }
        p
    }

    pub fn validated(self) -> Result<Self> {
        let p = self.validate();
        if p.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(p))
        }
    }
}
