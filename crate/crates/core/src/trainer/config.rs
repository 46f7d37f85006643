use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::am::{AmConfig, AmKind};
use crate::error::{Result, SharcError};
use crate::model::{BackboneSpec, HeadSpec};
use crate::replay::{Budget, Strategy};
use crate::stream::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Task identity known at test time; logits confined to the task's classes.
    #[serde(rename = "task-il")]
    TaskIl,
    #[serde(rename = "class-il")]
    ClassIl,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::TaskIl => "task-il",
            Scenario::ClassIl => "class-il",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = SharcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task-il" => Ok(Scenario::TaskIl),
            "class-il" => Ok(Scenario::ClassIl),
            other => Err(SharcError::InvalidArgument(format!(
                "unknown scenario {other:?}"
            ))),
        }
    }
}

/// Where the task stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StreamSpec {
    Synthetic(SyntheticSpec),
    /// IDX image/label pair, split into class-disjoint tasks.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        tasks: usize,
        classes_per_task: usize,
        test_fraction: f64,
    },
    /// Precomputed feature file with task ids already assigned.
    Features {
        path: PathBuf,
        test_fraction: f64,
    },
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub strategy: Strategy,
    pub am_kind: AmKind,
    /// Fraction of channels dropped per stored sample.
    pub mu: f64,
    pub budget: Budget,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub lr: f64,
    /// Forget after every `forget_every`-th task.
    pub forget_every: usize,
    pub forget_gamma: f64,
    pub seed: u64,
    pub stream: StreamSpec,
    pub backbone: BackboneSpec,
    pub head: HeadSpec,
    pub am: AmConfig,
    /// Write every training map of a task instead of only the buffered ones.
    pub write_full_task: bool,
    pub gem_eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::TaskIl,
            strategy: Strategy::Er,
            am_kind: AmKind::None,
            mu: 0.5,
            budget: Budget::Slots(50),
            batch_size: 10,
            epochs_per_task: 1,
            lr: 0.1,
            forget_every: 1,
            forget_gamma: 1.0,
            seed: 0,
            stream: StreamSpec::default(),
            backbone: BackboneSpec::default(),
            head: HeadSpec::default(),
            am: AmConfig::default(),
            write_full_task: false,
            gem_eps: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SharcError::Config(msg));
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu: {} outside [0, 1)", self.mu));
        }
        if self.forget_every == 0 {
            return bad("forget_every: must be >= 1".into());
        }
        if !(self.forget_gamma > 0.0 && self.forget_gamma <= 1.0) {
            return bad(format!(
                "forget_gamma: {} outside (0, 1]",
                self.forget_gamma
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr: {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size: must be >= 1".into());
        }
        if self.epochs_per_task == 0 {
            return bad("epochs_per_task: must be >= 1".into());
        }
        if self.budget.total() == 0 {
            return bad("budget: must be positive".into());
        }
        if !(self.gem_eps >= 0.0) {
            return bad(format!("gem_eps: {} < 0", self.gem_eps));
        }
        if self.am.pcn.schedule.write_steps == 0 {
            return bad("am.pcn.schedule.write_steps: must be >= 1".into());
        }
        if !(self.am.mhn.beta > 0.0) {
            return bad("am.mhn.beta: must be positive".into());
        }
        Ok(())
    }

    /// Parse and validate a JSON config. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| SharcError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"strategy": "foo"}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("strategy"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"am": {"mhn": {"betta": 1}}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("am.mhn"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"mu": 1.0}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("mu"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"stream": {"kind": "synthetic", "taskz": 3}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("stream"), "{err}");
    }

    #[test]
    fn budget_and_stream_forms() {
        let cfg = ExperimentConfig::from_json(
            r#"{"budget": {"bytes": 4096}, "scenario": "class-il",
                "stream": {"kind": "synthetic", "tasks": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.budget, Budget::Bytes(4096));
        assert_eq!(cfg.scenario, Scenario::ClassIl);
        let StreamSpec::Synthetic(s) = &cfg.stream else {
            panic!()
        };
        assert_eq!(s.tasks, 2);
        assert_eq!(s.classes_per_task, 2);
    }
}
