//! Run configuration: one strict JSON document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{FeatureConfig, FeatureKind, N_FRAMES};
use crate::controller::{ControllerConfig, SanasModel};
use crate::error::{Result, SanasError};
use crate::eval::StreamingParams;
use crate::supernet::{build_graph, GraphDescription};
use crate::training::TrainingConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureFlags {
    /// Charge every sampled edge, not only those on an input-output path.
    pub charge_inactive_edges: bool,
    /// 13 DCT coefficients instead of 40 log-mel energies per column.
    pub dct_features: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `builtin:toy`, `builtin:fig2` or a graph file.
    pub graph: String,
    /// Prepared dataset directory.
    pub data: PathBuf,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub flags: FeatureFlags,
    #[serde(default)]
    pub streaming: StreamingParams,
}

fn resolve_against(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SanasError::Config(format!("run config: {e}")))
    }

    /// Reads a config file; relative graph and data paths are taken relative
    /// to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SanasError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if !cfg.graph.starts_with("builtin:") {
            cfg.graph = resolve_against(base, Path::new(&cfg.graph)).to_string_lossy().into_owned();
        }
        cfg.data = resolve_against(base, &cfg.data);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.streaming.validate()?;
        if self.controller.d_z == 0 || self.controller.d_phi == 0 {
            return Err(SanasError::Config("controller dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            kind: if self.flags.dct_features {
                FeatureKind::Dct13
            } else {
                FeatureKind::LogMel
            },
        }
    }

    pub fn load_graph(&self) -> Result<GraphDescription> {
        GraphDescription::resolve(&self.graph)
    }

    /// Builds the model and checks that its input matches the feature maps.
    pub fn build_model(&self, graph: &GraphDescription) -> Result<SanasModel> {
        model_for(graph, self.controller, self.flags, self.feature_config())
    }

    /// SHA-256 (hex) of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serialises").to_string();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub(crate) fn model_for(
    graph: &GraphDescription,
    controller: ControllerConfig,
    flags: FeatureFlags,
    features: FeatureConfig,
) -> Result<SanasModel> {
    let spec = build_graph(graph)?;
    let want = [1, features.num_coefficients(), N_FRAMES];
    if spec.input_layer().shape != want {
        return Err(SanasError::Config(format!(
            "graph input {:?} does not match feature maps {want:?}",
            spec.input_layer().shape
        )));
    }
    Ok(SanasModel::new(spec, controller)?.charging_inactive_edges(flags.charge_inactive_edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{ "graph": "builtin:toy", "data": "prepared" }"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.controller, ControllerConfig::default());
        assert_eq!(c.training, TrainingConfig::default());
        c.validate().unwrap();
        let model = c.build_model(&c.load_graph().unwrap()).unwrap();
        assert_eq!(model.spec().name(), "toy");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{ "graph": "builtin:toy", "data": "d", "lambda": 1.0 }"#;
        assert!(matches!(RunConfig::from_json(bad), Err(SanasError::Config(_))));
        let nested = r#"{ "graph": "builtin:toy", "data": "d", "training": { "lamda": 1.0 } }"#;
        assert!(RunConfig::from_json(nested).is_err());
    }

    #[test]
    fn negative_lambda_fails_validation() {
        let c = RunConfig::from_json(r#"{ "graph": "builtin:toy", "data": "d", "training": { "lambda": -1.0 } }"#)
            .unwrap();
        assert!(matches!(c.validate(), Err(SanasError::Config(_))));
    }

    #[test]
    fn dct_flag_needs_a_matching_graph() {
        let c = RunConfig::from_json(r#"{ "graph": "builtin:toy", "data": "d", "flags": { "dct_features": true } }"#)
            .unwrap();
        assert!(c.build_model(&c.load_graph().unwrap()).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{ "graph": "g.json", "data": "prepared" }"#).unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.data, dir.path().join("prepared"));
        assert_eq!(PathBuf::from(&c.graph), dir.path().join("g.json"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.training.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
