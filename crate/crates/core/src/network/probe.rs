//! Analysis probes: per-layer activation statistics and mean domain
//! attention per DA block, both computed in a single streaming pass.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::model::Network;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Streaming mean and variance.
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: String,
    /// Mean over every activation of the layer across the dataset.
    pub mean: f64,
    /// Variance over every activation of the layer across the dataset.
    pub variance: f64,
    /// Variance of the per-sample layer means.
    pub between_sample_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub block: String,
    /// Mean attention vector over the dataset.
    pub mean: Vec<f64>,
}

/// Probe results for a set of named datasets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub datasets: Vec<String>,
    /// `activations[dataset][layer]`
    pub activations: Vec<Vec<LayerStats>>,
    /// `assignments[dataset][da_block]`
    pub assignments: Vec<Vec<Assignment>>,
}

pub fn activation_stats<'a, I>(
    net: &Network,
    images: I,
    domain_hint: Option<usize>,
) -> Result<Vec<LayerStats>>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let mut layers: Vec<String> = Vec::new();
    let mut all: Vec<Welford> = Vec::new();
    let mut between: Vec<Welford> = Vec::new();
    for image in images {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let x = g.constant(image.clone());
        let trace = net.forward_backbone(&mut g, &bound, x, domain_hint)?;
        if layers.is_empty() {
            layers = trace.layers.iter().map(|(n, _)| n.clone()).collect();
            all = vec![Welford::default(); layers.len()];
            between = vec![Welford::default(); layers.len()];
        }
        for (i, (_, node)) in trace.layers.iter().enumerate() {
            let data = g.value(*node).data();
            let mut sample = Welford::default();
            for &v in data {
                all[i].push(v);
                sample.push(v);
            }
            between[i].push(sample.mean());
        }
    }
    if layers.is_empty() {
        return Err(Error::contract(
            "activation statistics need a nonempty dataset",
        ));
    }
    Ok(layers
        .into_iter()
        .zip(all.iter().zip(&between))
        .map(|(layer, (a, b))| LayerStats {
            layer,
            mean: a.mean(),
            variance: a.variance(),
            between_sample_variance: b.variance(),
        })
        .collect())
}

pub fn attention_assignments<'a, I>(net: &Network, images: I) -> Result<Vec<Assignment>>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let blocks = net.da_blocks();
    if blocks.is_empty() {
        return Err(Error::contract("network has no DA blocks to probe"));
    }
    let n = net.spec().num_adapters;
    let mut sums = vec![vec![0.0; n]; blocks.len()];
    let mut count = 0usize;
    for image in images {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let x = g.constant(image.clone());
        let trace = net.forward_backbone(&mut g, &bound, x, None)?;
        for (acc, (_, node)) in sums.iter_mut().zip(&trace.attention) {
            for (a, v) in acc.iter_mut().zip(g.value(*node).data()) {
                *a += v;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::contract(
            "attention assignments need a nonempty dataset",
        ));
    }
    Ok(blocks
        .into_iter()
        .zip(sums)
        .map(|(block, s)| Assignment {
            block,
            mean: s.into_iter().map(|v| v / count as f64).collect(),
        })
        .collect())
}

/// Total-variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

impl ProbeReport {
    /// Rows are layers; columns `<dataset>_mean`, `<dataset>_var`.
    pub fn write_stats_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["layer".to_owned()];
        for d in &self.datasets {
            header.push(format!("{d}_mean"));
            header.push(format!("{d}_var"));
        }
        out.write_record(&header)?;
        let n_layers = self.activations.first().map_or(0, |a| a.len());
        for l in 0..n_layers {
            let mut row = vec![self.activations[0][l].layer.clone()];
            for stats in &self.activations {
                row.push(stats[l].mean.to_string());
                row.push(stats[l].variance.to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rows are `(block, dataset)`; columns the adapter indices.
    pub fn write_assignments_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self
            .assignments
            .iter()
            .flatten()
            .map(|a| a.mean.len())
            .max()
            .unwrap_or(0);
        let mut header = vec!["block".to_owned(), "dataset".to_owned()];
        header.extend((0..n).map(|i| format!("adapter_{i}")));
        out.write_record(&header)?;
        let n_blocks = self.assignments.first().map_or(0, |a| a.len());
        for b in 0..n_blocks {
            for (d, name) in self.datasets.iter().enumerate() {
                let a = &self.assignments[d][b];
                let mut row = vec![a.block.clone(), name.clone()];
                row.extend(a.mean.iter().map(|v| v.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 8.5, 0.25];
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((w.mean() - mean).abs() < 1e-12);
        assert!((w.variance() - var).abs() < 1e-12);
        assert_eq!(w.count(), 5);
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }
}
