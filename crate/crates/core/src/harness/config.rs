use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{DatasetConfig, Split};
use crate::error::{io_err, Error, Result};
use crate::networks::NetConfig;
use crate::render::RenderConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    /// Input camera of every evaluated pair; targets are all cameras of the scene.
    pub input_camera: usize,
    pub yaw_threshold_deg: f64,
    pub occlusion_ratios: Vec<f64>,
    /// Evaluate at most this many scenes of the split.
    pub max_scenes: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            input_camera: 0,
            yaw_threshold_deg: 30.0,
            occlusion_ratios: vec![0.1, 0.2, 0.3],
            max_scenes: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Every artifact of a command goes under this directory.
    pub run_dir: PathBuf,
    pub precision: Precision,
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Train on at most this many scenes of the training split.
    pub train_scene_limit: Option<usize>,
    /// Checkpoint to render or evaluate; for training, a checkpoint to resume from.
    pub checkpoint: Option<PathBuf>,
    pub ignore_config_hash: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("runs/default"),
            precision: Precision::F64,
            dataset: DatasetConfig::default(),
            net: NetConfig::default(),
            render: RenderConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            train_scene_limit: None,
            checkpoint: None,
            ignore_config_hash: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.net.validate()?;
        self.render.validate()?;
        self.train.validate()?;
        if self.eval.occlusion_ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("occlusion ratios must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parses `json` (empty for defaults), applies `key=value` overrides and validates.
    pub fn resolve(json: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
        let mut value = match json {
            Some(text) => serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?,
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let text = path.map(|p| std::fs::read_to_string(p).map_err(io_err(p))).transpose()?;
        RunConfig::resolve(text.as_deref(), overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets the dotted `key` of `root` to `value`, parsed as JSON when possible and
/// taken as a string otherwise. Intermediate objects are created as needed; unknown
/// keys are caught when the result is deserialized.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override '{assignment}' has an empty key segment")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(Error::Config(format!("override '{key}': '{}' is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::resolve(
            Some(r#"{"train": {"steps": 5}}"#),
            &["train.weights.adv=0".into(), "precision=f32".into(), "net.features=q".into(), "run_dir=out/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 5);
        assert_eq!(cfg.train.weights.adv, 0.0);
        assert_eq!(cfg.precision, Precision::F32);
        assert_eq!(cfg.net.features, crate::networks::FeatureSet::Q);
        assert_eq!(cfg.run_dir, PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::resolve(None, &["train.stpes=3".into()]).is_err());
        assert!(RunConfig::resolve(Some(r#"{"bogus": 1}"#), &[]).is_err());
        assert!(RunConfig::resolve(None, &["render.n_coarse=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["noequals".into()]).is_err());
        assert!(RunConfig::resolve(None, &["train.steps.x=1".into()]).is_err());
        assert!(RunConfig::resolve(Some("{"), &[]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::resolve(None, &["dataset.image_size=32".into()]).unwrap();
        let again = RunConfig::resolve(Some(&cfg.to_json()), &[]).unwrap();
        assert_eq!(cfg, again);
    }
}
