//! Run configuration: defaults, named presets, file overrides, and the
//! effective-config echo written next to every output.
//!
//! Precedence: built-in defaults < preset < config file < command flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hgdiffuser::constraints::{GuidanceConfig, Thresholds};
use hgdiffuser::diffusion::{NoiseSchedule, TrainConfig};
use hgdiffuser::error::{Error, Result};
use hgdiffuser::gripper::GripperSpec;
use hgdiffuser::network::NetworkConfig;

/// Synthetic dataset generation settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Object kinds to generate (box, cylinder, lshape).
    pub kinds: Vec<String>,
    /// Size variants per kind.
    pub variants: usize,
    pub grasps_per_object: usize,
    pub points_per_cloud: usize,
    pub demos_per_object: usize,
    /// Friction coefficient used for labeling and evaluation.
    pub mu: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kinds: vec!["box".into(), "cylinder".into(), "lshape".into()],
            variants: 8,
            grasps_per_object: 200,
            points_per_cloud: 512,
            demos_per_object: 1,
            mu: 0.5,
        }
    }
}

/// Benchmark settings; method rows are two-stage at each `two_stage_counts`
/// entry plus guided at each `guided_counts` entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub two_stage_counts: Vec<usize>,
    pub guided_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub warmup_calls: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            two_stage_counts: vec![100, 200, 500, 1000],
            guided_counts: vec![1, 100],
            seeds: vec![0],
            warmup_calls: 3,
        }
    }
}

/// The full run configuration mirrored into every output directory.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker-thread cap. The implementation is single-threaded throughout,
    /// so any value >= 1 is honored trivially.
    pub threads: usize,
    pub gripper: GripperSpec,
    pub network: NetworkConfig,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub thresholds: Thresholds,
    pub dataset: DatasetConfig,
    pub bench: BenchSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}`; valid presets: desk, paper"
            ))),
        }
    }
}

impl RunConfig {
    /// Desk preset: CPU-minutes network and training scale.
    pub fn desk() -> Self {
        RunConfig {
            network: NetworkConfig::desk(),
            train: TrainConfig::desk(),
            ..RunConfig::base()
        }
    }

    /// Paper preset: the published protocol (500 epochs, lr 1e-4) on the
    /// full-width network.
    pub fn paper() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            train: TrainConfig::paper(),
            ..RunConfig::base()
        }
    }

    fn base() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            gripper: GripperSpec::desk_default(),
            network: NetworkConfig::desk(),
            schedule: NoiseSchedule::default(),
            train: TrainConfig::desk(),
            guidance: GuidanceConfig::default(),
            thresholds: Thresholds::default(),
            dataset: DatasetConfig::default(),
            bench: BenchSection::default(),
        }
    }

    pub fn with_preset(preset: Option<Preset>) -> Self {
        match preset {
            None | Some(Preset::Desk) => RunConfig::desk(),
            Some(Preset::Paper) => RunConfig::paper(),
        }
    }

    /// Overlay a TOML file on top of this config. Unknown keys are
    /// rejected; sections not present keep their current values.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        // Round-trip through a TOML table so the file may be partial: start
        // from the current effective config and overwrite given keys.
        let current = toml::Value::try_from(&*self).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        let overlay: toml::Value = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        let merged = merge_toml(current, overlay);
        *self = merged.try_into().map_err(|e: toml::de::Error| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        self.gripper.validate()?;
        self.network.validate()?;
        self.schedule.validate()?;
        self.train.validate()?;
        self.guidance.validate()?;
        if self.network.g != self.gripper.point_count() {
            return Err(Error::InvalidArgument(format!(
                "network token count {} does not match the gripper's {} control points",
                self.network.g,
                self.gripper.point_count()
            )));
        }
        for kind in &self.dataset.kinds {
            hgdiffuser::scenes::ObjectKind::parse(kind)?;
        }
        Ok(())
    }

    /// Write the effective configuration next to command outputs.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self).map_err(|e| Error::Parse {
            file: "<effective config>".into(),
            message: e.to_string(),
        })?;
        fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}

fn merge_toml(base: toml::Value, overlay: toml::Value) -> toml::Value {
    match (base, overlay) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing) => merge_toml(existing, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, overlay) => overlay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "seed = 9\n[schedule]\nlevels = 12\n").unwrap();
        let mut cfg = RunConfig::desk();
        cfg.merge_file(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.schedule.levels, 12);
        assert_eq!(cfg.train.epochs, TrainConfig::desk().epochs);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "not_a_key = 1\n").unwrap();
        let mut cfg = RunConfig::desk();
        assert!(cfg.merge_file(&path).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::desk();
        cfg.echo(dir.path()).unwrap();
        let mut loaded = RunConfig::desk();
        loaded.merge_file(&dir.path().join("config.toml")).unwrap();
        assert_eq!(
            toml::Value::try_from(&cfg).unwrap(),
            toml::Value::try_from(&loaded).unwrap()
        );
    }
}
