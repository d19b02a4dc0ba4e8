//! Run configuration files and dataset resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::condense::{CondenseConfig, Mode};
use crate::coreset::CoresetMethod;
use crate::error::{Error, Result};
use crate::eval::{Method, ProtocolConfig};
use crate::graph::synthetic::PlantedPartition;
use crate::graph::{load_graph, Graph};
use crate::models::{ModelKind, TrainConfig};

/// Environment variable naming a directory that holds dataset directories.
pub const DATA_DIR_ENV: &str = "GROC_DATA_DIR";

/// Everything one invocation needs; every field has a default except `dataset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory, or `planted:cora[:seed]` / `planted:small[:seed]` for a generated graph.
    pub dataset: String,
    pub condense: CondenseConfig,
    /// Method scored by `evaluate`; defaults to `condense.mode`.
    pub method: Option<Method>,
    pub backbone: ModelKind,
    pub train: TrainConfig,
    pub condense_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    /// Method used by the `coreset` command.
    pub coreset: CoresetMethod,
    /// Score a snapshot every this many condensation epochs; 0 disables the curve.
    pub curve_every: usize,
    pub profile_epochs: usize,
    pub profile_modes: Vec<Mode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let protocol = ProtocolConfig::default();
        Self {
            dataset: String::new(),
            condense: protocol.condense,
            method: None,
            backbone: protocol.backbone,
            train: protocol.train,
            condense_seeds: protocol.condense_seeds,
            eval_seeds: protocol.eval_seeds,
            coreset: CoresetMethod::Random,
            curve_every: 0,
            profile_epochs: 100,
            profile_modes: Mode::ALL.to_vec(),
        }
    }
}

/// Where a graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Planted { preset: String, seed: u64 },
    Directory(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Graph> {
        match self {
            DatasetSource::Planted { preset, seed } => planted_preset(preset, *seed)?.generate(),
            DatasetSource::Directory(dir) => load_graph(dir),
        }
    }

    /// Short name for reports.
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Planted { preset, .. } => format!("planted-{preset}"),
            DatasetSource::Directory(dir) => dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        }
    }

    /// Canonical string that resolves back to this source.
    pub fn spec(&self) -> String {
        match self {
            DatasetSource::Planted { preset, seed } => format!("planted:{preset}:{seed}"),
            DatasetSource::Directory(dir) => dir.display().to_string(),
        }
    }
}

fn planted_preset(preset: &str, seed: u64) -> Result<PlantedPartition> {
    match preset {
        "cora" => Ok(PlantedPartition::cora_sized(seed)),
        "small" => Ok(PlantedPartition::small(seed)),
        other => Err(Error::Config(format!("unknown planted preset {other:?} (expected cora or small)"))),
    }
}

impl RunConfig {
    /// Reads a JSON config, or TOML when the extension is `.toml`. Unreadable or malformed
    /// files are configuration errors.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Method `evaluate` scores.
    pub fn method(&self) -> Method {
        self.method.unwrap_or(Method::Condense(self.condense.mode))
    }

    pub fn protocol(&self) -> ProtocolConfig {
        let method = self.method();
        let mut condense = self.condense.clone();
        if let Method::Condense(mode) = method {
            condense.mode = mode;
        }
        ProtocolConfig {
            method,
            condense,
            backbone: self.backbone,
            train: self.train,
            condense_seeds: self.condense_seeds.clone(),
            eval_seeds: self.eval_seeds.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.trim().is_empty() {
            return Err(Error::Config("dataset is not set".into()));
        }
        if self.profile_epochs == 0 || self.profile_modes.is_empty() {
            return Err(Error::Config("profile needs at least one epoch and one mode".into()));
        }
        self.protocol().validate()
    }

    /// Resolves `dataset`: planted presets first, then the path as given, relative to
    /// `base` (the config file's directory), and finally under the data-directory variable.
    pub fn resolve_dataset(&self, base: Option<&Path>) -> Result<DatasetSource> {
        resolve_dataset(&self.dataset, base, std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }
}

pub fn resolve_dataset(spec: &str, base: Option<&Path>, data_dir: Option<PathBuf>) -> Result<DatasetSource> {
    if let Some(rest) = spec.strip_prefix("planted:") {
        let (preset, seed) = match rest.split_once(':') {
            Some((p, s)) => (
                p,
                s.parse()
                    .map_err(|_| Error::Config(format!("bad planted seed {s:?} in {spec:?}")))?,
            ),
            None => (rest, 0),
        };
        planted_preset(preset, seed)?;
        return Ok(DatasetSource::Planted {
            preset: preset.to_string(),
            seed,
        });
    }
    let given = PathBuf::from(spec);
    let mut candidates = vec![given.clone()];
    if given.is_relative() {
        if let Some(b) = base {
            candidates.push(b.join(&given));
        }
        if let Some(d) = &data_dir {
            candidates.push(d.join(&given));
        }
    }
    candidates
        .into_iter()
        .find(|c| c.join("meta.json").is_file())
        .map(DatasetSource::Directory)
        .ok_or_else(|| {
            Error::Load(format!(
                "dataset {spec:?} not found (looked relative to the working directory, the config file and {DATA_DIR_ENV}={})",
                data_dir.map_or_else(|| "<unset>".into(), |d| d.display().to_string())
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_materialize_and_round_trip() {
        let cfg: RunConfig = serde_json::from_str(r#"{"dataset": "planted:small"}"#).unwrap();
        assert_eq!(cfg.eval_seeds, vec![0, 1, 2]);
        assert_eq!(cfg.train.epochs, 600);
        let text = serde_json::to_string(&cfg).unwrap();
        for key in ["omega1", "absorber", "weight_decay", "profile_modes"] {
            assert!(text.contains(key), "{key}");
        }
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"dataset": "x", "bogus": 1}"#,
            r#"{"dataset": "x", "condense": {"omega3": 1}}"#,
            r#"{"dataset": "x", "condense": {"absorber": {"eps": 1}}}"#,
            r#"{"dataset": "x", "train": {"momentum": 0.9}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn method_overrides_mode() {
        let mut cfg = RunConfig {
            dataset: "planted:small".into(),
            ..Default::default()
        };
        assert_eq!(cfg.method(), Method::Condense(Mode::Gcond));
        cfg.method = Some(Method::Condense(Mode::Timgroc));
        assert_eq!(cfg.protocol().condense.mode, Mode::Timgroc);
        cfg.method = Some(Method::Coreset(CoresetMethod::Herding));
        assert_eq!(cfg.protocol().condense.mode, Mode::Gcond);
        cfg.validate().unwrap();
        cfg.dataset.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_and_toml_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("a.json");
        let toml_path = dir.path().join("a.toml");
        std::fs::write(&json, r#"{"dataset": "planted:small", "condense": {"mode": "groc", "epochs": 7}}"#).unwrap();
        std::fs::write(&toml_path, "dataset = \"planted:small\"\n[condense]\nmode = \"groc\"\nepochs = 7\n").unwrap();
        let a = RunConfig::from_file(&json).unwrap();
        assert_eq!(a, RunConfig::from_file(&toml_path).unwrap());
        assert_eq!(a.condense.epochs, 7);
        std::fs::write(&toml_path, "dataset = 1").unwrap();
        assert!(matches!(RunConfig::from_file(&toml_path), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_file(dir.path().join("none.json")), Err(Error::Config(_))));
    }

    #[test]
    fn shipped_configs_validate() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let cfg = RunConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
        assert!(seen >= 3);
    }

    #[test]
    fn dataset_resolution_order() {
        assert_eq!(
            resolve_dataset("planted:cora:7", None, None).unwrap(),
            DatasetSource::Planted { preset: "cora".into(), seed: 7 }
        );
        assert!(resolve_dataset("planted:huge", None, None).is_err());

        let root = tempfile::tempdir().unwrap();
        let ds = root.path().join("toy");
        std::fs::create_dir(&ds).unwrap();
        std::fs::write(ds.join("meta.json"), "{}").unwrap();
        let found = resolve_dataset("toy", None, Some(root.path().to_path_buf())).unwrap();
        assert_eq!(found, DatasetSource::Directory(root.path().join("toy")));
        assert_eq!(found.name(), "toy");
        let via_base = resolve_dataset("toy", Some(root.path()), None).unwrap();
        assert_eq!(via_base, DatasetSource::Directory(root.path().join("toy")));
        assert!(matches!(resolve_dataset("toy", None, None), Err(Error::Load(_))));
    }
}
