use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::sample_loss;
use super::metrics::{average_metric, evaluate, EpochRecord, MetricsLog, Summary};
use super::model::Model;
use crate::data::{Batch, DatasetRegistry, DomainDataset, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{NetworkSpec, ParamId};

pub struct TrainOutcome {
    pub model: Model,
    pub log: MetricsLog,
}

/// Builds the untrained model of `cfg.architecture` with one head per dataset.
pub fn build_model(
    cfg: &TrainConfig,
    base: &NetworkSpec,
    datasets: &[DomainDataset],
) -> Result<Model> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::MissingData("no datasets to train on".into()));
    }
    let heads: Vec<_> = datasets
        .iter()
        .map(|d| cfg.task.head(d.num_classes()))
        .collect();
    let specs = cfg
        .architecture
        .member_specs(base, &heads, cfg.num_adapters);
    for s in &specs {
        s.validate()?;
    }
    Model::build(cfg.architecture, &specs, cfg.seed)
}

/// Held-out split used for evaluation: test, or val when test is empty.
pub fn eval_split(ds: &DomainDataset) -> Split {
    if ds.test.is_empty() {
        Split::Val
    } else {
        Split::Test
    }
}

pub fn evaluate_all(model: &Model, datasets: &[DomainDataset]) -> Result<Vec<f64>> {
    datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| evaluate(model, i, ds, eval_split(ds)))
        .collect()
}

/// SGD with momentum. Parameters that received no gradient in a step are
/// left untouched, velocity included.
struct Sgd {
    momentum: f64,
    velocity: Vec<Vec<Vec<f64>>>,
}

impl Sgd {
    fn new(model: &Model, momentum: f64) -> Self {
        let velocity = model
            .members
            .iter()
            .map(|m| vec![Vec::new(); m.params().len()])
            .collect();
        Self { momentum, velocity }
    }

    fn step(&mut self, model: &mut Model, member: usize, grads: Vec<(ParamId, Vec<f64>)>, lr: f64) {
        let params = model.members[member].params_mut();
        for (id, grad) in grads {
            let v = &mut self.velocity[member][id.index()];
            if v.is_empty() {
                v.resize(grad.len(), 0.0);
            }
            let p = params[id.index()].tensor.data_mut();
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(grad) {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

type Grads = Vec<(ParamId, Vec<f64>)>;

/// Mean batch loss and the gradients of every parameter it reaches.
fn batch_gradients(
    model: &Model,
    reg: &DatasetRegistry<'_>,
    batch: &Batch,
    step: usize,
) -> Result<(f64, usize, Grads)> {
    let d = batch.dataset;
    let net = model.member(d)?;
    let kind = net.head_kind(d)?;
    let hint = model.domain_hint(d);
    let mut g = Graph::new();
    let bound = net.bind(&mut g, true);
    let abort = |g: &Graph| Error::NumericalAbort {
        step,
        layer: g
            .first_non_finite()
            .map(|(scope, op)| format!("{scope} ({op})"))
            .unwrap_or_else(|| "loss".to_owned()),
    };
    let mut losses = Vec::with_capacity(batch.indices.len());
    for s in reg.samples(batch) {
        let x = g.constant(s.image.clone());
        // Ops that refuse NaN inputs surface as value errors mid-forward.
        let trace = match net.forward_graph(&mut g, &bound, x, d, hint) {
            Err(Error::Value(_)) if g.first_non_finite().is_some() => return Err(abort(&g)),
            other => other?,
        };
        g.set_scope("loss");
        losses.push(sample_loss(&mut g, trace.output, kind, s)?);
    }
    let n = losses.len();
    let total = g.add_all(&losses)?;
    let loss = g.scale(total, 1.0 / n as f64)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(abort(&g));
    }
    g.backward(loss)?;
    let grads = net
        .param_ids()
        .filter_map(|id| g.grad(bound.node(id)).map(|gr| (id, gr.to_vec())))
        .collect();
    Ok((value, n, grads))
}

/// Multi-domain training: every batch comes from one dataset and updates
/// only the parameters its forward pass touches.
pub fn train(
    cfg: &TrainConfig,
    base: &NetworkSpec,
    datasets: &[DomainDataset],
) -> Result<TrainOutcome> {
    let mut model = build_model(cfg, base, datasets)?;
    for (i, ds) in datasets.iter().enumerate() {
        model.check_task(i, ds)?;
    }
    let mut reg = DatasetRegistry::new(datasets, cfg.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a4d_91e3_0b7c_2f61);
    let mut sgd = Sgd::new(&model, cfg.momentum);
    let mut log = MetricsLog::default();
    let epochs = cfg.epochs();
    let mut step = 0;
    let mut last_metrics = None;

    for epoch in 0..epochs {
        let lr = cfg.lr_at(epoch);
        reg.start_epoch(&mut rng);
        let mut sums = vec![(0.0, 0usize); datasets.len()];
        while let Some(batch) = reg.sample_batch(&mut rng) {
            let (loss, n, grads) = batch_gradients(&model, &reg, &batch, step)?;
            let member = model.member_index(batch.dataset)?;
            sgd.step(&mut model, member, grads, lr);
            sums[batch.dataset].0 += loss * n as f64;
            sums[batch.dataset].1 += n;
            step += 1;
        }
        let due = epoch + 1 == epochs || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
        let metrics = if due {
            Some(evaluate_all(&model, datasets)?)
        } else {
            None
        };
        for (i, ds) in datasets.iter().enumerate() {
            let (s, n) = sums[i];
            log.records.push(EpochRecord {
                epoch,
                dataset: ds.spec.name.clone(),
                loss: if n > 0 { s / n as f64 } else { 0.0 },
                metric: metrics.as_ref().map(|m| m[i]),
            });
        }
        if metrics.is_some() {
            last_metrics = metrics;
        }
    }

    let final_metrics = match last_metrics {
        Some(m) => m,
        None => evaluate_all(&model, datasets)?,
    };
    let params = model.param_summary();
    log.summary = Some(Summary {
        architecture: cfg.architecture.name().to_owned(),
        seed: cfg.seed,
        datasets: datasets.iter().map(|d| d.spec.name.clone()).collect(),
        average_metric: average_metric(&final_metrics),
        final_metrics,
        params,
        adapter_overhead: params.adapter_overhead(),
        relative_cost: model.relative_cost(),
    });
    Ok(TrainOutcome { model, log })
}
