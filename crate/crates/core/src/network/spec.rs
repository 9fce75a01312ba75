use serde::{Deserialize, Serialize};

use crate::adapters::{AttentionMode, DEFAULT_REDUCTION};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    /// Stride of the first block of the stage.
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand; inner width is `channels / width_divisor`.
    Bottleneck { width_divisor: usize },
}

/// What wraps a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Insertion {
    #[default]
    None,
    SingleSe,
    /// Hard-switched bank of `num_adapters` branches; needs the domain at forward time.
    SeBank,
    DaModule,
}

/// Which blocks may carry a DA module. Blocks outside the placement that
/// ask for `DaModule` get a single SE adapter instead.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DaPlacement {
    All,
    /// Blocks `0` and `⌈B/2⌉ − 1` of every stage with `B` blocks.
    #[default]
    FirstMiddle,
    Custom(Vec<bool>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdapterPosition {
    /// Rescale the block output after the residual sum.
    PostBlock,
    /// Rescale the residual branch before it is added to the shortcut.
    #[default]
    ResidualBranch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadKind {
    Classification {
        num_classes: usize,
    },
    /// Dense `grid_size×grid_size` head: objectness, class logits and four box offsets per cell.
    Localization {
        num_classes: usize,
        grid_size: usize,
    },
}

impl HeadKind {
    pub fn num_classes(&self) -> usize {
        match *self {
            HeadKind::Classification { num_classes } => num_classes,
            HeadKind::Localization { num_classes, .. } => num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub task_id: usize,
    pub kind: HeadKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeMask {
    pub stem: bool,
    pub stage_1: bool,
}

impl FreezeMask {
    pub const NONE: FreezeMask = FreezeMask {
        stem: false,
        stage_1: false,
    };
}

impl Default for FreezeMask {
    /// Stem and first stage frozen.
    fn default() -> Self {
        FreezeMask {
            stem: true,
            stage_1: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub input_size: usize,
    pub stem: ConvSpec,
    pub stages: Vec<StageSpec>,
    pub block: BlockKind,
    /// One entry per residual block, in stage order.
    pub insertion_policy: Vec<Insertion>,
    pub da_placement: DaPlacement,
    pub adapter_position: AdapterPosition,
    /// Branch count of SE banks and DA modules.
    pub num_adapters: usize,
    pub reduction: usize,
    pub adapter_bias: bool,
    pub attention_mode: AttentionMode,
    pub heads: Vec<HeadSpec>,
    pub freeze: FreezeMask,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let stages = vec![
            StageSpec {
                blocks: 2,
                channels: 16,
                stride: 1,
            },
            StageSpec {
                blocks: 2,
                channels: 32,
                stride: 2,
            },
            StageSpec {
                blocks: 2,
                channels: 64,
                stride: 2,
            },
        ];
        Self {
            in_channels: 3,
            input_size: 32,
            stem: ConvSpec {
                out_channels: 16,
                kernel: 3,
                stride: 2,
            },
            insertion_policy: vec![Insertion::None; 6],
            stages,
            block: BlockKind::Bottleneck { width_divisor: 4 },
            da_placement: DaPlacement::FirstMiddle,
            adapter_position: AdapterPosition::ResidualBranch,
            num_adapters: 1,
            reduction: DEFAULT_REDUCTION,
            adapter_bias: true,
            attention_mode: AttentionMode::Learned,
            heads: Vec::new(),
            freeze: FreezeMask::default(),
        }
    }
}

impl NetworkSpec {
    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Same insertion for every block.
    pub fn with_insertion(mut self, insertion: Insertion) -> Self {
        self.insertion_policy = vec![insertion; self.total_blocks()];
        self
    }

    /// Classification heads for tasks `0..classes.len()`.
    pub fn with_classification_heads(mut self, classes: &[usize]) -> Self {
        self.heads = classes
            .iter()
            .enumerate()
            .map(|(task_id, &num_classes)| HeadSpec {
                task_id,
                kind: HeadKind::Classification { num_classes },
            })
            .collect();
        self
    }

    /// `(stage, index within stage)` of every block.
    pub fn block_positions(&self) -> Vec<(usize, usize)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(s, st)| (0..st.blocks).map(move |b| (s, b)))
            .collect()
    }

    /// Whether block `flat` may hold a DA module under the placement.
    pub fn placement_allows(&self, flat: usize) -> bool {
        match &self.da_placement {
            DaPlacement::All => true,
            DaPlacement::Custom(mask) => mask.get(flat).copied().unwrap_or(false),
            DaPlacement::FirstMiddle => {
                let (s, b) = self.block_positions()[flat];
                let n = self.stages[s].blocks;
                b == 0 || b == n.div_ceil(2) - 1
            }
        }
    }

    /// Insertion actually applied at each block once placement is taken into account.
    pub fn effective_insertions(&self) -> Vec<Insertion> {
        self.insertion_policy
            .iter()
            .enumerate()
            .map(|(i, &ins)| match ins {
                Insertion::DaModule if !self.placement_allows(i) => Insertion::SingleSe,
                other => other,
            })
            .collect()
    }

    pub fn needs_domain(&self) -> bool {
        self.effective_insertions().contains(&Insertion::SeBank)
    }

    pub fn conv_out(size: usize, kernel: usize, stride: usize) -> usize {
        (size + 2 * (kernel / 2) - kernel) / stride + 1
    }

    /// Spatial extent of the last stage's output.
    pub fn final_size(&self) -> usize {
        let mut s = Self::conv_out(self.input_size, self.stem.kernel, self.stem.stride);
        for st in &self.stages {
            s = Self::conv_out(s, 3, st.stride);
        }
        s
    }

    pub fn final_channels(&self) -> usize {
        self.stages
            .last()
            .map_or(self.stem.out_channels, |s| s.channels)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.in_channels == 0 {
            errs.push("in_channels: must be positive".to_owned());
        }
        if self.input_size == 0 {
            errs.push("input_size: must be positive".to_owned());
        }
        if self.stem.kernel.is_multiple_of(2)
            || self.stem.stride == 0
            || self.stem.out_channels == 0
        {
            errs.push("stem: kernel must be odd, stride and out_channels positive".to_owned());
        }
        if self.stages.is_empty() {
            errs.push("stages: at least one stage required".to_owned());
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.blocks == 0 || st.channels == 0 || st.stride == 0 {
                errs.push(format!(
                    "stages[{i}]: blocks, channels and stride must be positive"
                ));
            }
        }
        if let BlockKind::Bottleneck { width_divisor: 0 } = self.block {
            errs.push("block.width_divisor: must be positive".to_owned());
        }
        if self.insertion_policy.len() != self.total_blocks() {
            errs.push(format!(
                "insertion_policy: {} entries for {} blocks",
                self.insertion_policy.len(),
                self.total_blocks()
            ));
        }
        if let DaPlacement::Custom(mask) = &self.da_placement {
            if mask.len() != self.total_blocks() {
                errs.push(format!(
                    "da_placement: custom mask has {} entries for {} blocks",
                    mask.len(),
                    self.total_blocks()
                ));
            }
        }
        if self.num_adapters == 0 {
            errs.push("num_adapters: must be at least 1".to_owned());
        }
        if self.reduction == 0 {
            errs.push("reduction: must be at least 1".to_owned());
        }
        if let AttentionMode::Forced(i) = self.attention_mode {
            if i >= self.num_adapters {
                errs.push(format!(
                    "attention_mode: forced({i}) with {} adapters",
                    self.num_adapters
                ));
            }
        }
        if self.heads.is_empty() {
            errs.push("heads: at least one task head required".to_owned());
        }
        let mut ids: Vec<_> = self.heads.iter().map(|h| h.task_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            errs.push("heads: task ids must be unique (one head per task)".to_owned());
        }
        if errs.is_empty() {
            let final_size = self.final_size();
            for h in &self.heads {
                match h.kind {
                    HeadKind::Classification { num_classes: 0 } => errs.push(format!(
                        "heads[task {}]: num_classes must be positive",
                        h.task_id
                    )),
                    HeadKind::Localization {
                        num_classes,
                        grid_size,
                    } if (num_classes == 0
                        || grid_size == 0
                        || !final_size.is_multiple_of(grid_size)) =>
                    {
                        errs.push(format!(
                                "heads[task {}]: grid_size {grid_size} must divide final map size {final_size}",
                                h.task_id
                            ));
                    }
                    _ => {}
                }
            }
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
    fn first_middle_picks_first_and_middle_blocks() {
        let mut spec = NetworkSpec {
            stages: vec![
                StageSpec {
                    blocks: 2,
                    channels: 8,
                    stride: 1,
                },
                StageSpec {
                    blocks: 4,
                    channels: 8,
                    stride: 1,
                },
                StageSpec {
                    blocks: 5,
                    channels: 8,
                    stride: 1,
                },
            ],
            ..NetworkSpec::default()
        };
        spec.da_placement = DaPlacement::FirstMiddle;
        let allowed: Vec<usize> = (0..spec.total_blocks())
            .filter(|&i| spec.placement_allows(i))
            .collect();
        // stage 0: {0}, stage 1: {0, 1}, stage 2: {0, 2}
        assert_eq!(allowed, vec![0, 2, 3, 6, 8]);
    }

    #[test]
    fn validation_lists_every_offending_field() {
        let spec = NetworkSpec {
            insertion_policy: vec![Insertion::None; 2],
            num_adapters: 0,
            ..NetworkSpec::default()
        };
        match spec.validate() {
            Err(Error::Validation(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("insertion_policy")));
                assert!(errs.iter().any(|e| e.starts_with("num_adapters")));
                assert!(errs.iter().any(|e| e.starts_with("heads")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn default_geometry() {
        let spec = NetworkSpec::default();
        assert_eq!(spec.total_blocks(), 6);
        assert_eq!(spec.final_size(), 4);
        assert_eq!(spec.final_channels(), 64);
    }

    #[test]
    fn strict_json() {
        let err = serde_json::from_str::<NetworkSpec>(r#"{"input_size": 32, "bogus": 1}"#);
        assert!(err.is_err());
        let spec: NetworkSpec = serde_json::from_str(r#"{"input_size": 16}"#).unwrap();
        assert_eq!(spec.input_size, 16);
    }
}
