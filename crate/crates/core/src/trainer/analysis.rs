use serde::{Deserialize, Serialize};

use super::model::Model;
use super::train::eval_split;
use crate::data::DomainDataset;
use crate::error::Result;
use crate::network::{activation_stats, attention_assignments, total_variation, ProbeReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Stats,
    Attention,
}

impl std::str::FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stats" => Ok(ProbeKind::Stats),
            "attention" => Ok(ProbeKind::Attention),
            other => Err(format!("unknown probe kind `{other}` (stats, attention)")),
        }
    }
}

/// Runs a probe over the held-out split of every dataset, each through the
/// member network that serves it.
pub fn probe_model(
    model: &Model,
    datasets: &[DomainDataset],
    kind: ProbeKind,
) -> Result<ProbeReport> {
    let mut report = ProbeReport {
        datasets: datasets.iter().map(|d| d.spec.name.clone()).collect(),
        ..Default::default()
    };
    for (i, ds) in datasets.iter().enumerate() {
        let net = model.member(i)?;
        let images = ds.split(eval_split(ds)).iter().map(|s| &s.image);
        match kind {
            ProbeKind::Stats => {
                report
                    .activations
                    .push(activation_stats(net, images, model.domain_hint(i))?)
            }
            ProbeKind::Attention => report.assignments.push(attention_assignments(net, images)?),
        }
    }
    Ok(report)
}

/// Per DA block, the total-variation distance between the mean assignments
/// of datasets `a` and `b`.
pub fn assignment_divergence(report: &ProbeReport, a: usize, b: usize) -> Vec<(String, f64)> {
    match (report.assignments.get(a), report.assignments.get(b)) {
        (Some(pa), Some(pb)) => pa
            .iter()
            .zip(pb)
            .map(|(x, y)| (x.block.clone(), total_variation(&x.mean, &y.mean)))
            .collect(),
        _ => Vec::new(),
    }
}
