//! JSON run configuration for the `domattn` binary.
//!
//! ```json
//! {
//!   "data": ["default6"],
//!   "network": { "stem": { "out_channels": 16, "kernel": 3, "stride": 2 } },
//!   "train": { "architecture": "universal_da", "seed": 0 },
//!   "output_dir": "runs/demo"
//! }
//! ```
//!
//! Unknown keys are rejected at every level. Omitted sections take their
//! defaults, and [`RunConfig::resolve`] expands presets so the echoed
//! config is self-contained.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, presets, DomainDataset, DomainSpec, DATASET_EXTENSION};
use crate::error::{Error, Result};
use crate::network::{HeadKind, HeadSpec, Insertion, NetworkSpec};
use crate::trainer::{CompareConfig, TrainConfig};

/// A preset name or an inline domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataEntry {
    Preset(String),
    Domain(Box<DomainSpec>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Vec<DataEntry>,
    /// Where dataset containers are written and read.
    pub data_dir: PathBuf,
    /// Backbone template. Insertions, heads and bank sizes are filled in
    /// per architecture.
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub compare: CompareConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: vec![DataEntry::Preset("default6".to_owned())],
            data_dir: PathBuf::from("data"),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            compare: CompareConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(vec![format!("config: {e}")]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Validation(vec![format!("cannot read config {}: {e}", path.display())])
        })?;
        Self::from_json(&text)
    }

    /// Domain specs with presets expanded, in order.
    pub fn domains(&self) -> Result<Vec<DomainSpec>> {
        let mut out = Vec::new();
        for entry in &self.data {
            match entry {
                DataEntry::Preset(name) => out.extend(presets::preset(name)?),
                DataEntry::Domain(spec) => out.push((**spec).clone()),
            }
        }
        Ok(out)
    }

    pub fn dataset_path(&self, spec: &DomainSpec) -> PathBuf {
        self.data_dir
            .join(format!("{}.{DATASET_EXTENSION}", spec.name))
    }

    /// Checks every section and collects all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match self.domains() {
            Ok(domains) if domains.is_empty() => problems.push("data: no domains".to_owned()),
            Ok(domains) => {
                for d in &domains {
                    if let Err(e) = d.validate() {
                        problems.push(format!("data[{}]: {e}", d.name));
                    }
                }
                for (i, d) in domains.iter().enumerate() {
                    if domains[..i].iter().any(|o| o.name == d.name) {
                        problems.push(format!("data: duplicate domain name {}", d.name));
                    }
                }
            }
            Err(e) => problems.push(format!("data: {e}")),
        }
        let template = NetworkSpec {
            heads: vec![HeadSpec {
                task_id: 0,
                kind: HeadKind::Classification { num_classes: 2 },
            }],
            ..self.network.clone()
        }
        .with_insertion(Insertion::None);
        if let Err(e) = template.validate() {
            problems.push(format!("network: {e}"));
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("train: {e}"));
        }
        if self.compare.seeds.is_empty() {
            problems.push("compare: seeds must not be empty".to_owned());
        }
        if self.compare.adapter_sweep.contains(&0) {
            problems.push("compare: adapter_sweep entries must be positive".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Copy with presets replaced by their domain specs.
    pub fn resolve(&self) -> Result<Self> {
        Ok(Self {
            data: self
                .domains()?
                .into_iter()
                .map(|d| DataEntry::Domain(Box::new(d)))
                .collect(),
            ..self.clone()
        })
    }

    /// Writes the resolved config into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        let mut json = serde_json::to_string_pretty(&self.resolve()?)?;
        json.push('\n');
        fs::write(&path, json)?;
        Ok(path)
    }

    /// Loads every domain container and checks it was generated from the
    /// configured spec.
    pub fn load_datasets(&self) -> Result<Vec<DomainDataset>> {
        self.domains()?
            .into_iter()
            .map(|spec| {
                let path = self.dataset_path(&spec);
                let ds = load_dataset(&path)?;
                if ds.spec != spec {
                    return Err(Error::MissingData(format!(
                        "{} was generated from a different spec; rerun `domattn gen-data`",
                        path.display()
                    )));
                }
                Ok(ds)
            })
            .collect()
    }
}
