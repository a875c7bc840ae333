//! Scenario files: TOML overrides layered on the standard desk layout,
//! plus the scripts and monitor models a run needs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::monitor::{Labeler, Monitor, NominalModel};
use crate::sim::{World, WorldConfig};
use crate::task::script::ScriptLibrary;
use crate::task::{ExecConfig, Executive};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub sensitivity: f64,
    /// Trained model files, relative to the scenario file.
    pub models: Vec<PathBuf>,
    pub labeler: Labeler,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self { sensitivity: 2.0, models: Vec::new(), labeler: Labeler::default() }
    }
}

/// The file as written. Every table is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub world: WorldConfig,
    pub executive: ExecConfig,
    pub monitor: MonitorSettings,
    /// Script file replacing the shipped scripts, relative to the scenario file.
    pub scripts: Option<PathBuf>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            name: "standard".into(),
            world: WorldConfig::standard(),
            executive: ExecConfig::default(),
            monitor: MonitorSettings::default(),
            scripts: None,
        }
    }
}

/// A scenario with its scripts and models loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub scripts: ScriptLibrary,
    pub models: Vec<NominalModel>,
    /// Where it was loaded from, if anywhere.
    pub path: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
}

impl Scenario {
    /// The standard layout with shipped scripts and no monitor models.
    pub fn standard() -> Self {
        Self { file: ScenarioFile::default(), scripts: ScriptLibrary::standard(), models: Vec::new(), path: None }
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut s = Self::parse(&text, &path.display().to_string(), base)?;
        s.path = Some(path.to_path_buf());
        Ok(s)
    }

    /// Parses scenario text; relative paths resolve against `base`.
    pub fn parse(text: &str, name: &str, base: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse { path: name.into(), message: e.to_string() })?;
        let scripts = match &file.scripts {
            Some(p) => {
                let p = base.join(p);
                ScriptLibrary::parse(&read(&p)?)
                    .map_err(|e| ScenarioError::Parse { path: p.display().to_string(), message: e.to_string() })?
            }
            None => ScriptLibrary::standard(),
        };
        let mut models = Vec::new();
        for m in &file.monitor.models {
            let p = base.join(m);
            let model = NominalModel::from_json(&read(&p)?)
                .map_err(|e| ScenarioError::Parse { path: p.display().to_string(), message: e.to_string() })?;
            models.push(model);
        }
        let s = Self { file, scripts, models, path: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.file.world.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let sens = self.file.monitor.sensitivity;
        if !(sens.is_finite() && sens >= 0.0) {
            return Err(ScenarioError::Invalid("monitor sensitivity must be finite and nonnegative".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m.subtask) {
                return Err(ScenarioError::Invalid(format!("two monitor models for {}", m.subtask.name())));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.file.world.seed = seed;
        self
    }

    /// SHA-256 over everything that affects a run: the resolved world,
    /// executive settings, scripts and monitor models.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            world: &'a WorldConfig,
            executive: &'a ExecConfig,
            sensitivity: f64,
            labeler: &'a Labeler,
            scripts: &'a ScriptLibrary,
            models: &'a [NominalModel],
        }
        let c = Canonical {
            world: &self.file.world,
            executive: &self.file.executive,
            sensitivity: self.file.monitor.sensitivity,
            labeler: &self.file.monitor.labeler,
            scripts: &self.scripts,
            models: &self.models,
        };
        let bytes = serde_json::to_vec(&c).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn monitor(&self) -> Monitor {
        let mut m = Monitor::with_models(self.models.iter().cloned(), self.file.monitor.sensitivity);
        m.labeler = self.file.monitor.labeler.clone();
        m
    }

    pub fn executive(&self) -> Result<Executive, ScenarioError> {
        let world = World::new(self.file.world.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(Executive::new(world, self.scripts.clone(), self.file.executive.clone(), self.monitor()))
    }
}
