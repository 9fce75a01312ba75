use rand::seq::SliceRandom;
use rand::Rng;

use super::domain::{DomainDataset, Sample, Split};
use crate::error::{Error, Result};

/// A single-domain batch: indices into that dataset's training split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Position of the dataset in the registry.
    pub dataset: usize,
    pub indices: Vec<usize>,
}

/// Ordered datasets plus per-dataset epoch cursors.
#[derive(Clone, Debug)]
pub struct DatasetRegistry<'a> {
    datasets: &'a [DomainDataset],
    batch_size: usize,
    split: Split,
    order: Vec<Vec<usize>>,
    cursor: Vec<usize>,
}

impl<'a> DatasetRegistry<'a> {
    pub fn new(datasets: &'a [DomainDataset], batch_size: usize) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::contract("registry needs at least one dataset"));
        }
        if batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        let order = datasets
            .iter()
            .map(|d| (0..d.train.len()).collect())
            .collect();
        let cursor = vec![0; datasets.len()];
        Ok(Self {
            datasets,
            batch_size,
            split: Split::Train,
            order,
            cursor,
        })
    }

    pub fn datasets(&self) -> &'a [DomainDataset] {
        self.datasets
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn split_len(&self, d: usize) -> usize {
        self.datasets[d].split(self.split).len()
    }

    fn remaining(&self, d: usize) -> usize {
        self.split_len(d) - self.cursor[d]
    }

    pub fn remaining_total(&self) -> usize {
        (0..self.len()).map(|d| self.remaining(d)).sum()
    }

    /// Reshuffles every dataset's order and rewinds all cursors.
    pub fn start_epoch<R: Rng>(&mut self, rng: &mut R) {
        for (d, order) in self.order.iter_mut().enumerate() {
            order.clear();
            order.extend(0..self.datasets[d].split(self.split).len());
            order.shuffle(rng);
        }
        self.cursor.iter_mut().for_each(|c| *c = 0);
    }

    /// Next single-domain batch, or `None` at the epoch boundary. The
    /// dataset is drawn with probability proportional to its unvisited
    /// samples.
    pub fn sample_batch<R: Rng>(&mut self, rng: &mut R) -> Option<Batch> {
        let total = self.remaining_total();
        if total == 0 {
            return None;
        }
        let mut u = rng.gen_range(0..total);
        let mut pick = 0;
        for d in 0..self.len() {
            let r = self.remaining(d);
            if u < r {
                pick = d;
                break;
            }
            u -= r;
        }
        let start = self.cursor[pick];
        let end = (start + self.batch_size).min(self.split_len(pick));
        self.cursor[pick] = end;
        Some(Batch {
            dataset: pick,
            indices: self.order[pick][start..end].to_vec(),
        })
    }

    pub fn samples<'b>(&self, batch: &'b Batch) -> impl Iterator<Item = &'a Sample> + 'b
    where
        'a: 'b,
    {
        let split = self.datasets[batch.dataset].split(self.split);
        batch.indices.iter().map(move |&i| &split[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain, presets};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sized(train: &[usize]) -> Vec<DomainDataset> {
        train
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut spec = presets::default6().remove(i);
                spec.sizes.train = n;
                spec.sizes.val = 0;
                spec.sizes.test = 0;
                generate_domain(&spec).unwrap()
            })
            .collect()
    }

    #[test]
    fn epoch_counts_60_40_20() {
        let sets = sized(&[60, 40, 20]);
        let mut reg = DatasetRegistry::new(&sets, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            reg.start_epoch(&mut rng);
            let mut batches = [0usize; 3];
            let mut seen = vec![vec![false; 60], vec![false; 40], vec![false; 20]];
            while let Some(b) = reg.sample_batch(&mut rng) {
                batches[b.dataset] += 1;
                for &i in &b.indices {
                    assert!(!seen[b.dataset][i]);
                    seen[b.dataset][i] = true;
                }
            }
            assert_eq!(batches, [6, 4, 2]);
            assert!(seen.iter().flatten().all(|&s| s));
        }
    }

    #[test]
    fn single_dataset_and_tail_batch() {
        let sets = sized(&[25]);
        let mut reg = DatasetRegistry::new(&sets, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        reg.start_epoch(&mut rng);
        let sizes: Vec<usize> = std::iter::from_fn(|| reg.sample_batch(&mut rng))
            .map(|b| {
                assert_eq!(b.dataset, 0);
                b.indices.len()
            })
            .collect();
        assert_eq!(sizes, vec![10, 10, 5]);
        assert!(reg.sample_batch(&mut rng).is_none());
    }

    #[test]
    fn empty_registry_rejected() {
        assert!(DatasetRegistry::new(&[], 4).is_err());
        assert!(DatasetRegistry::new(&sized(&[5]), 0).is_err());
    }
}
