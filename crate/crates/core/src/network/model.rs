use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{AdapterPosition, BlockKind, FreezeMask, HeadKind, Insertion, NetworkSpec};
use crate::adapters::{
    self, AttentionMode, DaModule, DaModuleParams, Gate, SeAdapter, SeAdapterParams,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Shared,
    Adapter,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Stem,
    Stage(usize),
    Head(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub group: Group,
    pub tensor: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter totals by partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub total: usize,
    pub shared: usize,
    pub adapters: usize,
    pub heads: usize,
}

impl ParamSummary {
    /// Adapter parameters relative to shared backbone parameters.
    pub fn adapter_overhead(&self) -> f64 {
        self.adapters as f64 / self.shared as f64
    }
}

impl std::ops::Add for ParamSummary {
    type Output = ParamSummary;
    fn add(self, o: ParamSummary) -> ParamSummary {
        ParamSummary {
            total: self.total + o.total,
            shared: self.shared + o.shared,
            adapters: self.adapters + o.adapters,
            heads: self.heads + o.heads,
        }
    }
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
enum BlockAdapter {
    None,
    Single(SeAdapter<ParamId>),
    Bank(Vec<SeAdapter<ParamId>>),
    Da(DaModule<ParamId>),
}

#[derive(Clone, Debug)]
struct Block {
    name: String,
    convs: Vec<Conv>,
    shortcut: Option<Conv>,
    adapter: BlockAdapter,
}

#[derive(Clone, Debug)]
struct Head {
    task_id: usize,
    kind: HeadKind,
    weight: ParamId,
    bias: ParamId,
    pool_factor: usize,
}

/// A residual backbone with optional per-block adapters and one output
/// head per task.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Param>,
    stem: Conv,
    blocks: Vec<Block>,
    heads: Vec<Head>,
}

/// Graph nodes of a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub output: NodeId,
    /// Post-activation maps: the input, the stem and every block.
    pub layers: Vec<(String, NodeId)>,
    /// Mixing vector of every DA block.
    pub attention: Vec<(String, NodeId)>,
}

/// Parameters inserted into a graph, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }
}

/// Raw head output.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    Classification { logits: Tensor },
    Localization(GridOutput),
}

/// `(1 + K + 4) × G × G` map: channel 0 objectness, channels `1..=K` class
/// logits, last four the box offsets `(dx, dy, w, h)` of each cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOutput {
    pub num_classes: usize,
    pub grid_size: usize,
    pub raw: Tensor,
}

impl GridOutput {
    fn at(&self, channel: usize, cell: usize) -> f64 {
        let g2 = self.grid_size * self.grid_size;
        self.raw.data()[channel * g2 + cell]
    }

    pub fn objectness(&self, cell: usize) -> f64 {
        self.at(0, cell)
    }

    pub fn class_logits(&self, cell: usize) -> Vec<f64> {
        (0..self.num_classes)
            .map(|k| self.at(1 + k, cell))
            .collect()
    }

    pub fn offsets(&self, cell: usize) -> [f64; 4] {
        let base = 1 + self.num_classes;
        [0, 1, 2, 3].map(|i| self.at(base + i, cell))
    }
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    params: &'a mut Vec<Param>,
}

impl Builder<'_> {
    fn push(
        &mut self,
        name: String,
        partition: Partition,
        group: Group,
        tensor: Tensor,
    ) -> ParamId {
        self.params.push(Param {
            name,
            partition,
            group,
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    /// He-uniform weights (scaled by `gain`), zero bias.
    fn conv(
        &mut self,
        name: &str,
        group: Group,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let w = Tensor::uniform([cout, cin, k, k], -bound, bound, &mut self.rng);
        let weight = self.push(format!("{name}.weight"), Partition::Shared, group, w);
        let bias = self.push(
            format!("{name}.bias"),
            Partition::Shared,
            group,
            Tensor::zeros([cout]),
        );
        Conv {
            weight,
            bias: Some(bias),
            stride,
            pad: k / 2,
        }
    }

    fn adapter(&mut self, name: &str, group: Group, p: SeAdapterParams) -> SeAdapter<ParamId> {
        let mut handles = p
            .handles()
            .into_iter()
            .map(|(n, _)| n)
            .collect::<Vec<_>>()
            .into_iter();
        p.map(|t| {
            let field = handles.next().expect("one handle per tensor");
            self.push(
                format!("{name}.{field}"),
                Partition::Adapter,
                group,
                t.clone(),
            )
        })
    }
}

impl Network {
    /// Builds and deterministically initialises a network.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: &mut params,
        };

        let stem = b.conv(
            "stem",
            Group::Stem,
            spec.in_channels,
            spec.stem.out_channels,
            spec.stem.kernel,
            spec.stem.stride,
            1.0,
        );

        let insertions = spec.effective_insertions();
        let residual_gain = 1.0 / (spec.total_blocks() as f64).sqrt();
        let mut blocks = Vec::new();
        let mut cin = spec.stem.out_channels;
        let mut flat = 0;
        for (s, stage) in spec.stages.iter().enumerate() {
            let group = Group::Stage(s);
            for bi in 0..stage.blocks {
                let name = format!("stage{}.block{bi}", s + 1);
                let stride = if bi == 0 { stage.stride } else { 1 };
                let cout = stage.channels;
                let convs = match spec.block {
                    BlockKind::Basic => vec![
                        b.conv(&format!("{name}.conv1"), group, cin, cout, 3, stride, 1.0),
                        b.conv(
                            &format!("{name}.conv2"),
                            group,
                            cout,
                            cout,
                            3,
                            1,
                            residual_gain,
                        ),
                    ],
                    BlockKind::Bottleneck { width_divisor } => {
                        let w = (cout / width_divisor).max(1);
                        vec![
                            b.conv(&format!("{name}.conv1"), group, cin, w, 1, 1, 1.0),
                            b.conv(&format!("{name}.conv2"), group, w, w, 3, stride, 1.0),
                            b.conv(
                                &format!("{name}.conv3"),
                                group,
                                w,
                                cout,
                                1,
                                1,
                                residual_gain,
                            ),
                        ]
                    }
                };
                let shortcut = (cin != cout || stride != 1).then(|| {
                    b.conv(
                        &format!("{name}.shortcut"),
                        group,
                        cin,
                        cout,
                        1,
                        stride,
                        1.0,
                    )
                });
                let adapter = match insertions[flat] {
                    Insertion::None => BlockAdapter::None,
                    Insertion::SingleSe => {
                        let p = SeAdapterParams::init(
                            cout,
                            spec.reduction,
                            spec.adapter_bias,
                            &mut b.rng,
                        );
                        BlockAdapter::Single(b.adapter(&format!("{name}.se"), group, p))
                    }
                    Insertion::SeBank => BlockAdapter::Bank(
                        (0..spec.num_adapters)
                            .map(|i| {
                                let p = SeAdapterParams::init(
                                    cout,
                                    spec.reduction,
                                    spec.adapter_bias,
                                    &mut b.rng,
                                );
                                b.adapter(&format!("{name}.bank{i}"), group, p)
                            })
                            .collect(),
                    ),
                    Insertion::DaModule => {
                        let p = DaModuleParams::init(
                            cout,
                            spec.reduction,
                            spec.num_adapters,
                            spec.adapter_bias,
                            spec.attention_mode,
                            &mut b.rng,
                        );
                        let adapters = p
                            .adapters
                            .iter()
                            .enumerate()
                            .map(|(i, a)| b.adapter(&format!("{name}.da.use{i}"), group, a.clone()))
                            .collect();
                        let w_da = b.push(
                            format!("{name}.da.w_da"),
                            Partition::Adapter,
                            group,
                            p.w_da.clone(),
                        );
                        BlockAdapter::Da(DaModule {
                            adapters,
                            w_da,
                            b_da: None,
                            mode: p.mode,
                        })
                    }
                };
                blocks.push(Block {
                    name,
                    convs,
                    shortcut,
                    adapter,
                });
                cin = cout;
                flat += 1;
            }
        }

        let final_c = spec.final_channels();
        let final_size = spec.final_size();
        let mut heads = Vec::new();
        for h in &spec.heads {
            let group = Group::Head(h.task_id);
            let name = format!("head{}", h.task_id);
            let (out, pool_factor) = match h.kind {
                HeadKind::Classification { num_classes } => (num_classes, 0),
                HeadKind::Localization {
                    num_classes,
                    grid_size,
                } => (1 + num_classes + 4, final_size / grid_size),
            };
            let bound = 1.0 / (final_c as f64).sqrt();
            let shape: Vec<usize> = match h.kind {
                HeadKind::Classification { .. } => vec![out, final_c],
                HeadKind::Localization { .. } => vec![out, final_c, 1, 1],
            };
            let w = Tensor::uniform(shape, -bound, bound, &mut b.rng);
            let weight = b.push(format!("{name}.weight"), Partition::Head, group, w);
            let bias = b.push(
                format!("{name}.bias"),
                Partition::Head,
                group,
                Tensor::zeros([out]),
            );
            heads.push(Head {
                task_id: h.task_id,
                kind: h.kind,
                weight,
                bias,
                pool_factor,
            });
        }

        Ok(Self {
            spec: spec.clone(),
            params,
            stem,
            blocks,
            heads,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_summary(&self) -> ParamSummary {
        let mut s = ParamSummary::default();
        for p in &self.params {
            let n = p.tensor.numel();
            s.total += n;
            match p.partition {
                Partition::Shared => s.shared += n,
                Partition::Adapter => s.adapters += n,
                Partition::Head => s.heads += n,
            }
        }
        s
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.task_id).collect()
    }

    pub fn head_kind(&self, task_id: usize) -> Result<HeadKind> {
        Ok(self.head(task_id)?.kind)
    }

    fn head(&self, task_id: usize) -> Result<&Head> {
        self.heads
            .iter()
            .find(|h| h.task_id == task_id)
            .ok_or_else(|| Error::Lookup(format!("no head for task {task_id}")))
    }

    /// Replaces the freeze mask; frozen shared parameters stop receiving updates.
    pub fn apply_freeze(&mut self, mask: FreezeMask) {
        self.spec.freeze = mask;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        let p = &self.params[id.0];
        p.partition == Partition::Shared
            && match p.group {
                Group::Stem => self.spec.freeze.stem,
                Group::Stage(0) => self.spec.freeze.stage_1,
                _ => false,
            }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Inserts every parameter as a graph leaf. Gradients are tracked only
    /// when `trainable` is set, and never for frozen parameters.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let nodes = self
            .param_ids()
            .map(|id| {
                let t = self.params[id.0].tensor.clone();
                g.leaf(t, trainable && !self.is_frozen(id))
            })
            .collect();
        Bound { nodes }
    }

    fn check_hint(&self, domain_hint: Option<usize>) -> Result<()> {
        match (self.spec.needs_domain(), domain_hint) {
            (true, None) => Err(Error::contract(
                "network has hard-switched adapter banks and needs a domain hint",
            )),
            (false, Some(_)) => Err(Error::contract(
                "network is domain-agnostic; a domain hint is not accepted",
            )),
            (true, Some(d)) if d >= self.spec.num_adapters => Err(Error::DomainIndex {
                index: d,
                len: self.spec.num_adapters,
            }),
            _ => Ok(()),
        }
    }

    fn apply_conv(&self, g: &mut Graph, bound: &Bound, x: NodeId, c: &Conv) -> Result<NodeId> {
        g.conv2d(
            x,
            bound.node(c.weight),
            c.bias.map(|b| bound.node(b)),
            c.stride,
            c.pad,
        )
    }

    fn apply_adapter(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: NodeId,
        adapter: &BlockAdapter,
        domain_hint: Option<usize>,
        attention: &mut Option<NodeId>,
    ) -> Result<NodeId> {
        let bind = |a: &SeAdapter<ParamId>| a.map(|id| bound.node(*id));
        match adapter {
            BlockAdapter::None => Ok(x),
            BlockAdapter::Single(a) => adapters::se_adapter_node(g, x, &bind(a), Gate::Sigmoid),
            BlockAdapter::Bank(bank) => {
                let d = domain_hint.ok_or_else(|| Error::contract("SE bank without domain"))?;
                let bank: Vec<_> = bank.iter().map(bind).collect();
                adapters::se_bank_node(g, x, &bank, d)
            }
            BlockAdapter::Da(m) => {
                let m = m.map(|id| bound.node(*id));
                let out = adapters::da_module_node(g, x, &m)?;
                *attention = Some(out.attention);
                Ok(out.output)
            }
        }
    }

    /// Stem and residual blocks, without a head.
    pub fn forward_backbone(
        &self,
        g: &mut Graph,
        bound: &Bound,
        image: NodeId,
        domain_hint: Option<usize>,
    ) -> Result<Trace> {
        self.check_hint(domain_hint)?;
        let want = [
            self.spec.in_channels,
            self.spec.input_size,
            self.spec.input_size,
        ];
        if g.value(image).shape() != want {
            return Err(Error::shape(format!(
                "input of shape {:?}, network expects {want:?}",
                g.value(image).shape()
            )));
        }
        let mut layers = vec![("input".to_owned(), image)];
        let mut attention = Vec::new();

        g.set_scope("stem");
        let x = self.apply_conv(g, bound, image, &self.stem)?;
        let mut x = g.relu(x)?;
        layers.push(("stem".to_owned(), x));

        for block in &self.blocks {
            g.set_scope(&block.name);
            let mut h = x;
            let last = block.convs.len() - 1;
            for (i, c) in block.convs.iter().enumerate() {
                h = self.apply_conv(g, bound, h, c)?;
                if i < last {
                    h = g.relu(h)?;
                }
            }
            let short = match &block.shortcut {
                Some(c) => self.apply_conv(g, bound, x, c)?,
                None => x,
            };
            let mut att = None;
            x = match self.spec.adapter_position {
                AdapterPosition::PostBlock => {
                    let s = g.add(h, short)?;
                    let s = g.relu(s)?;
                    self.apply_adapter(g, bound, s, &block.adapter, domain_hint, &mut att)?
                }
                AdapterPosition::ResidualBranch => {
                    let h =
                        self.apply_adapter(g, bound, h, &block.adapter, domain_hint, &mut att)?;
                    let s = g.add(h, short)?;
                    g.relu(s)?
                }
            };
            if let Some(a) = att {
                attention.push((block.name.clone(), a));
            }
            layers.push((block.name.clone(), x));
        }
        Ok(Trace {
            output: x,
            layers,
            attention,
        })
    }

    /// Full pass through backbone and the head of `task_id`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        image: NodeId,
        task_id: usize,
        domain_hint: Option<usize>,
    ) -> Result<Trace> {
        let head = self.head(task_id)?;
        let mut trace = self.forward_backbone(g, bound, image, domain_hint)?;
        g.set_scope(&format!("head{task_id}"));
        let w = bound.node(head.weight);
        let b = bound.node(head.bias);
        trace.output = match head.kind {
            HeadKind::Classification { .. } => {
                let pooled = g.global_avg_pool(trace.output)?;
                g.fully_connected(pooled, w, Some(b))?
            }
            HeadKind::Localization { .. } => {
                let pooled = if head.pool_factor > 1 {
                    g.avg_pool(trace.output, head.pool_factor)?
                } else {
                    trace.output
                };
                g.conv2d(pooled, w, Some(b), 1, 0)?
            }
        };
        Ok(trace)
    }

    /// Evaluation-only forward.
    pub fn forward(
        &self,
        image: &Tensor,
        task_id: usize,
        domain_hint: Option<usize>,
    ) -> Result<HeadOutput> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let trace = self.forward_graph(&mut g, &bound, x, task_id, domain_hint)?;
        let out = g.take_value(trace.output);
        Ok(match self.head(task_id)?.kind {
            HeadKind::Classification { .. } => HeadOutput::Classification { logits: out },
            HeadKind::Localization {
                num_classes,
                grid_size,
            } => HeadOutput::Localization(GridOutput {
                num_classes,
                grid_size,
                raw: out,
            }),
        })
    }

    /// Overwrites parameters with same-named, same-shaped tensors.
    pub(crate) fn load_params(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::SpecMismatch(format!(
                "{} stored tensors for {} parameters",
                tensors.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(tensors) {
            if p.name != name || p.tensor.shape() != t.shape() {
                return Err(Error::SpecMismatch(format!(
                    "stored {name} {:?} where {} {:?} was expected",
                    t.shape(),
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor = t;
        }
        Ok(())
    }

    /// Sets the mixing mode of every DA block.
    pub fn set_attention_mode(&mut self, mode: AttentionMode) -> Result<()> {
        if let AttentionMode::Forced(i) = mode {
            if i >= self.spec.num_adapters {
                return Err(Error::DomainIndex {
                    index: i,
                    len: self.spec.num_adapters,
                });
            }
        }
        self.spec.attention_mode = mode;
        for b in &mut self.blocks {
            if let BlockAdapter::Da(m) = &mut b.adapter {
                m.mode = mode;
            }
        }
        Ok(())
    }

    /// Names of blocks carrying a DA module.
    pub fn da_blocks(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter(|b| matches!(b.adapter, BlockAdapter::Da(_)))
            .map(|b| b.name.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::adapter_param_count;
    use crate::network::{activation_stats, attention_assignments};

    fn spec(insertion: Insertion, n: usize) -> NetworkSpec {
        let mut s = NetworkSpec::default()
            .with_insertion(insertion)
            .with_classification_heads(&[3, 4]);
        s.num_adapters = n;
        s
    }

    fn image(seed: u64) -> Tensor {
        Tensor::uniform([3, 32, 32], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        let s = spec(Insertion::DaModule, 3);
        let a = Network::build(&s, 7).unwrap();
        let b = Network::build(&s, 7).unwrap();
        let c = Network::build(&s, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn plain_backbone_has_no_adapter_partition() {
        let net = Network::build(&spec(Insertion::None, 1), 0).unwrap();
        let p = net.param_summary();
        assert_eq!(p.adapters, 0);
        assert_eq!(p.total, p.shared + p.heads);
        assert!(net.da_blocks().is_empty());
    }

    #[test]
    fn da_partition_counts_single_se_outside_placement() {
        let s = spec(Insertion::DaModule, 4);
        let net = Network::build(&s, 0).unwrap();
        let mut want = 0;
        let mut flat = 0;
        for st in &s.stages {
            for _ in 0..st.blocks {
                want += if s.placement_allows(flat) {
                    adapter_param_count(st.channels, s.reduction, 4, true, true)
                } else {
                    adapter_param_count(st.channels, s.reduction, 1, false, true)
                };
                flat += 1;
            }
        }
        assert_eq!(net.param_summary().adapters, want);
        assert_eq!(
            net.da_blocks(),
            ["stage1.block0", "stage2.block0", "stage3.block0"]
        );
    }

    #[test]
    fn domain_hint_contracts() {
        let bank = Network::build(&spec(Insertion::SeBank, 2), 0).unwrap();
        let x = image(0);
        assert!(matches!(bank.forward(&x, 0, None), Err(Error::Contract(_))));
        assert!(matches!(
            bank.forward(&x, 0, Some(2)),
            Err(Error::DomainIndex { index: 2, len: 2 })
        ));
        assert!(bank.forward(&x, 0, Some(1)).is_ok());
        let da = Network::build(&spec(Insertion::DaModule, 2), 0).unwrap();
        assert!(matches!(
            da.forward(&x, 0, Some(0)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(da.forward(&x, 9, None), Err(Error::Lookup(_))));
        let small = Tensor::zeros([3, 16, 16]);
        assert!(matches!(da.forward(&small, 0, None), Err(Error::Shape(_))));
    }

    #[test]
    fn single_branch_da_matches_single_se() {
        let mut s_da = spec(Insertion::DaModule, 1);
        s_da.da_placement = super::super::DaPlacement::All;
        let mut s_se = spec(Insertion::SingleSe, 1);
        s_se.da_placement = super::super::DaPlacement::All;
        let se = Network::build(&s_se, 3).unwrap();
        let mut da = Network::build(&s_da, 11).unwrap();
        let mut src = se.params().iter();
        for p in da.params_mut() {
            if p.name.ends_with("w_da") {
                p.tensor = Tensor::uniform(
                    p.tensor.shape().to_vec(),
                    -1.0,
                    1.0,
                    &mut ChaCha8Rng::seed_from_u64(5),
                );
                continue;
            }
            p.tensor = src.next().unwrap().tensor.clone();
        }
        for seed in 0..3 {
            let x = image(seed);
            let HeadOutput::Classification { logits: a } = se.forward(&x, 1, None).unwrap() else {
                panic!()
            };
            let HeadOutput::Classification { logits: b } = da.forward(&x, 1, None).unwrap() else {
                panic!()
            };
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn freeze_covers_shared_stem_and_first_stage_only() {
        let mut net = Network::build(&spec(Insertion::DaModule, 2), 0).unwrap();
        for id in net.param_ids() {
            let p = &net.params()[id.index()];
            let want = p.partition == Partition::Shared
                && matches!(p.group, Group::Stem | Group::Stage(0));
            assert_eq!(net.is_frozen(id), want, "{}", p.name);
        }
        net.apply_freeze(FreezeMask::NONE);
        assert!(net.param_ids().all(|id| !net.is_frozen(id)));
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        assert_eq!(bound.nodes().len(), net.params().len());
    }

    #[test]
    fn forced_mode_out_of_range_rejected() {
        let mut net = Network::build(&spec(Insertion::DaModule, 3), 0).unwrap();
        assert!(net.set_attention_mode(AttentionMode::Forced(3)).is_err());
        net.set_attention_mode(AttentionMode::Forced(2)).unwrap();
        assert_eq!(net.spec().attention_mode, AttentionMode::Forced(2));
    }

    #[test]
    fn probes_are_well_formed() {
        let net = Network::build(&spec(Insertion::DaModule, 3), 1).unwrap();
        let images: Vec<Tensor> = (0..4).map(image).collect();
        let att = attention_assignments(&net, &images).unwrap();
        assert_eq!(att.len(), 3);
        for a in &att {
            assert!((a.mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.mean.iter().all(|v| *v >= 0.0));
        }
        let stats = activation_stats(&net, &images, None).unwrap();
        assert_eq!(stats.len(), 2 + net.spec().total_blocks());
        assert_eq!(stats[0].layer, "input");
        assert!(stats
            .iter()
            .skip(1)
            .all(|s| s.mean >= 0.0 && s.variance >= 0.0));
        let plain = Network::build(&spec(Insertion::None, 1), 1).unwrap();
        assert!(attention_assignments(&plain, &images).is_err());
        assert!(activation_stats(&plain, std::iter::empty(), None).is_err());
    }
}
