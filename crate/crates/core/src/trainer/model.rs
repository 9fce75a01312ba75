use serde::{Deserialize, Serialize};

use super::config::Architecture;
use crate::data::{BoundingBox, DomainDataset};
use crate::error::{Error, Result};
use crate::graph::{sigmoid, softmax_slice};
use crate::network::{HeadKind, HeadOutput, Network, NetworkSpec, ParamSummary};
use crate::tensor::Tensor;

/// Trained model: one shared network, or one network per dataset for `Bank`.
#[derive(Clone, Debug)]
pub struct Model {
    pub architecture: Architecture,
    pub members: Vec<Network>,
}

/// A single decoded prediction for one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub score: f64,
    pub bbox: Option<BoundingBox>,
}

impl Model {
    pub fn build(architecture: Architecture, specs: &[NetworkSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::contract("model needs at least one network spec"));
        }
        let members = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Network::build(s, seed.wrapping_add(i as u64 * 0x1000_0001)))
            .collect::<Result<_>>()?;
        Ok(Self {
            architecture,
            members,
        })
    }

    pub fn num_datasets(&self) -> usize {
        match self.architecture {
            Architecture::Bank => self.members.len(),
            _ => self.members[0].spec().heads.len(),
        }
    }

    pub fn specs(&self) -> Vec<NetworkSpec> {
        self.members.iter().map(|m| m.spec().clone()).collect()
    }

    /// Index of the member serving `dataset`.
    pub fn member_index(&self, dataset: usize) -> Result<usize> {
        if dataset >= self.num_datasets() {
            return Err(Error::DomainIndex {
                index: dataset,
                len: self.num_datasets(),
            });
        }
        Ok(match self.architecture {
            Architecture::Bank => dataset,
            _ => 0,
        })
    }

    pub fn member(&self, dataset: usize) -> Result<&Network> {
        Ok(&self.members[self.member_index(dataset)?])
    }

    pub fn domain_hint(&self, dataset: usize) -> Option<usize> {
        self.architecture.uses_domain_hint().then_some(dataset)
    }

    pub fn head_kind(&self, dataset: usize) -> Result<HeadKind> {
        self.member(dataset)?.head_kind(dataset)
    }

    pub fn param_summary(&self) -> ParamSummary {
        self.members
            .iter()
            .map(|m| m.param_summary())
            .fold(ParamSummary::default(), |a, b| a + b)
    }

    pub fn relative_cost(&self) -> usize {
        self.architecture.relative_cost(self.num_datasets())
    }

    pub fn forward(&self, image: &Tensor, dataset: usize) -> Result<HeadOutput> {
        self.member(dataset)?
            .forward(image, dataset, self.domain_hint(dataset))
    }

    pub fn predict(&self, image: &Tensor, dataset: usize) -> Result<Prediction> {
        Ok(decode(&self.forward(image, dataset)?))
    }

    /// Checks that `ds` matches the head of `dataset`.
    pub fn check_task(&self, dataset: usize, ds: &DomainDataset) -> Result<()> {
        let kind = self.head_kind(dataset)?;
        if kind.num_classes() != ds.num_classes() {
            return Err(Error::contract(format!(
                "head {dataset} has {} classes, dataset {} has {}",
                kind.num_classes(),
                ds.spec.name,
                ds.num_classes()
            )));
        }
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-scoring class, and for grid heads the box of the most confident cell.
pub fn decode(out: &HeadOutput) -> Prediction {
    match out {
        HeadOutput::Classification { logits } => {
            let p = softmax_slice(logits.data());
            let label = argmax(&p);
            Prediction {
                label,
                score: p[label],
                bbox: None,
            }
        }
        HeadOutput::Localization(grid) => {
            let g = grid.grid_size;
            let cells = g * g;
            let obj: Vec<f64> = (0..cells).map(|c| grid.objectness(c)).collect();
            let cell = argmax(&obj);
            let p = softmax_slice(&grid.class_logits(cell));
            let label = argmax(&p);
            let [dx, dy, w, h] = grid.offsets(cell);
            let (row, col) = ((cell / g) as f64, (cell % g) as f64);
            Prediction {
                label,
                score: sigmoid(obj[cell]) * p[label],
                bbox: Some(BoundingBox {
                    cx: (col + dx) / g as f64,
                    cy: (row + dy) / g as f64,
                    w,
                    h,
                }),
            }
        }
    }
}
