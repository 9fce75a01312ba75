use serde::{Deserialize, Serialize};

use crate::adapters::AttentionMode;
use crate::error::{Error, Result};
use crate::network::{HeadKind, HeadSpec, Insertion, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One independent network per dataset.
    Bank,
    /// Shared backbone with a hard-switched SE bank in every block.
    Adaptive,
    /// Shared backbone, no adapters.
    Universal,
    /// Shared backbone with domain-attention modules.
    UniversalDa,
    /// As `UniversalDa` with the attention pinned to the uniform average.
    UniversalDaFixed,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Bank,
        Architecture::Adaptive,
        Architecture::Universal,
        Architecture::UniversalDa,
        Architecture::UniversalDaFixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Bank => "bank",
            Architecture::Adaptive => "adaptive",
            Architecture::Universal => "universal",
            Architecture::UniversalDa => "universal_da",
            Architecture::UniversalDaFixed => "universal_da_fixed",
        }
    }

    /// Forward passes needed for one image of unknown domain.
    pub fn relative_cost(self, num_datasets: usize) -> usize {
        match self {
            Architecture::Bank | Architecture::Adaptive => num_datasets,
            _ => 1,
        }
    }

    /// Whether forward passes take the dataset index as a domain hint.
    pub fn uses_domain_hint(self) -> bool {
        self == Architecture::Adaptive
    }

    /// Network specs of the model members. `Bank` yields one single-head
    /// spec per dataset; the rest one spec with a head per dataset.
    pub fn member_specs(
        self,
        base: &NetworkSpec,
        heads: &[HeadKind],
        num_adapters: Option<usize>,
    ) -> Vec<NetworkSpec> {
        let d = heads.len();
        let all_heads: Vec<HeadSpec> = heads
            .iter()
            .enumerate()
            .map(|(task_id, &kind)| HeadSpec { task_id, kind })
            .collect();
        let mut spec = base.clone();
        spec.heads = all_heads.clone();
        match self {
            Architecture::Bank => {
                let plain = spec.with_insertion(Insertion::None);
                return all_heads
                    .into_iter()
                    .map(|h| NetworkSpec {
                        heads: vec![h],
                        ..plain.clone()
                    })
                    .collect();
            }
            Architecture::Adaptive => {
                spec = spec.with_insertion(Insertion::SeBank);
                spec.num_adapters = d;
            }
            Architecture::Universal => spec = spec.with_insertion(Insertion::None),
            Architecture::UniversalDa | Architecture::UniversalDaFixed => {
                spec = spec.with_insertion(Insertion::DaModule);
                spec.num_adapters = num_adapters.unwrap_or(d);
                spec.attention_mode = if self == Architecture::UniversalDaFixed {
                    AttentionMode::FixedAverage
                } else {
                    AttentionMode::Learned
                };
            }
        }
        vec![spec]
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    #[default]
    Classification,
    Localization {
        grid_size: usize,
    },
}

impl Task {
    pub fn head(self, num_classes: usize) -> HeadKind {
        match self {
            Task::Classification => HeadKind::Classification { num_classes },
            Task::Localization { grid_size } => HeadKind::Localization {
                num_classes,
                grid_size,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStage {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub task: Task,
    pub batch_size: usize,
    pub lr_schedule: Vec<LrStage>,
    pub momentum: f64,
    pub seed: u64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    /// Zero evaluates only the last epoch.
    pub eval_every: usize,
    /// Branch count of DA modules; defaults to the number of datasets.
    pub num_adapters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::UniversalDa,
            task: Task::Classification,
            batch_size: 8,
            lr_schedule: vec![
                LrStage {
                    epochs: 16,
                    lr: 0.02,
                },
                LrStage {
                    epochs: 2,
                    lr: 0.002,
                },
            ],
            momentum: 0.9,
            seed: 0,
            eval_every: 0,
            num_adapters: None,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.lr_schedule.iter().map(|s| s.epochs).sum()
    }

    /// Learning rate of zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for s in &self.lr_schedule {
            end += s.epochs;
            if epoch < end {
                return s.lr;
            }
        }
        self.lr_schedule.last().map_or(0.0, |s| s.lr)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("batch_size: must be positive".to_owned());
        }
        if self
            .lr_schedule
            .iter()
            .any(|s| !(s.lr.is_finite() && s.lr >= 0.0))
        {
            errs.push("lr_schedule: learning rates must be finite and ≥ 0".to_owned());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push("momentum: must lie in [0, 1)".to_owned());
        }
        if self.num_adapters == Some(0) {
            errs.push("num_adapters: must be at least 1".to_owned());
        }
        if let Task::Localization { grid_size: 0 } = self.task {
            errs.push("task.grid_size: must be positive".to_owned());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_lookup() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs(), 18);
        assert_eq!(cfg.lr_at(0), 0.02);
        assert_eq!(cfg.lr_at(15), 0.02);
        assert_eq!(cfg.lr_at(16), 0.002);
        assert_eq!(cfg.lr_at(17), 0.002);
    }

    #[test]
    fn relative_costs() {
        assert_eq!(Architecture::Bank.relative_cost(6), 6);
        assert_eq!(Architecture::Adaptive.relative_cost(6), 6);
        assert_eq!(Architecture::UniversalDa.relative_cost(6), 1);
        assert_eq!(Architecture::Universal.relative_cost(6), 1);
    }

    #[test]
    fn fixed_variant_forces_average() {
        let heads = [HeadKind::Classification { num_classes: 3 }; 4];
        let specs =
            Architecture::UniversalDaFixed.member_specs(&NetworkSpec::default(), &heads, None);
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].attention_mode, AttentionMode::FixedAverage);
        assert_eq!(specs[0].num_adapters, 4);
        assert_eq!(
            Architecture::Bank
                .member_specs(&NetworkSpec::default(), &heads, None)
                .len(),
            4
        );
    }

    #[test]
    fn names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
    }
}
