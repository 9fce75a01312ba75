//! Squeeze-and-excitation adapters and the domain-attention module.
//!
//! An SE adapter squeezes a `C×H×W` map to a `C`-vector by global average
//! pooling and excites it through `FC(C→d) → ReLU → FC(d→C)`, with
//! `d = max(1, ⌊C/r⌋)`. Three ways of using adapters are provided:
//!
//! * a single adapter, gating the map with `σ(excitation)`;
//! * a hard-switched bank, where a known domain index picks one branch;
//! * the domain-attention (DA) module, which always evaluates all `N`
//!   branches, stacks their excitations into a `C×N` matrix, mixes the
//!   columns with a softmax over `W_DA · avgpool(X)` and gates the map with
//!   `σ` of the mixture.
//!
//! Parameter structs are generic over the handle they hold: [`Tensor`] for
//! owned values, [`NodeId`] once bound into a [`Graph`], or any index type
//! a container wants to use.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Default channel reduction factor.
pub const DEFAULT_REDUCTION: usize = 16;

/// Bottleneck width of an adapter on `channels` channels.
pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeAdapter<T> {
    pub channels: usize,
    pub reduction: usize,
    /// `d×C`
    pub w1: T,
    pub b1: Option<T>,
    /// `C×d`
    pub w2: T,
    pub b2: Option<T>,
}

pub type SeAdapterParams = SeAdapter<Tensor>;

impl<T> SeAdapter<T> {
    pub fn hidden(&self) -> usize {
        hidden_width(self.channels, self.reduction)
    }

    pub fn has_bias(&self) -> bool {
        self.b1.is_some()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SeAdapter<U> {
        SeAdapter {
            channels: self.channels,
            reduction: self.reduction,
            w1: f(&self.w1),
            b1: self.b1.as_ref().map(&mut f),
            w2: f(&self.w2),
            b2: self.b2.as_ref().map(&mut f),
        }
    }

    /// Handles in a fixed order: `w1, b1, w2, b2` (absent biases skipped).
    pub fn handles(&self) -> Vec<(&'static str, &T)> {
        let mut v = vec![("w1", &self.w1)];
        if let Some(b) = &self.b1 {
            v.push(("b1", b));
        }
        v.push(("w2", &self.w2));
        if let Some(b) = &self.b2 {
            v.push(("b2", b));
        }
        v
    }
}

impl SeAdapterParams {
    pub fn zeros(channels: usize, reduction: usize, with_bias: bool) -> Self {
        let d = hidden_width(channels, reduction);
        Self {
            channels,
            reduction,
            w1: Tensor::zeros([d, channels]),
            b1: with_bias.then(|| Tensor::zeros([d])),
            w2: Tensor::zeros([channels, d]),
            b2: with_bias.then(|| Tensor::zeros([channels])),
        }
    }

    /// FC weights uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        reduction: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let d = hidden_width(channels, reduction);
        let a1 = 1.0 / (channels as f64).sqrt();
        let a2 = 1.0 / (d as f64).sqrt();
        let w1 = Tensor::uniform([d, channels], -a1, a1, rng);
        let w2 = Tensor::uniform([channels, d], -a2, a2, rng);
        Self {
            channels,
            reduction,
            w1,
            b1: with_bias.then(|| Tensor::zeros([d])),
            w2,
            b2: with_bias.then(|| Tensor::zeros([channels])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let d = self.hidden();
        let check = |t: &Tensor, want: &[usize], name: &str| {
            if t.shape() == want {
                Ok(())
            } else {
                Err(Error::shape(format!(
                    "SE adapter {name}: shape {:?}, expected {want:?} for C={c}, r={}",
                    t.shape(),
                    self.reduction
                )))
            }
        };
        check(&self.w1, &[d, c], "w1")?;
        check(&self.w2, &[c, d], "w2")?;
        if self.b1.is_some() != self.b2.is_some() {
            return Err(Error::shape(
                "SE adapter biases must be both present or both absent",
            ));
        }
        if let Some(b) = &self.b1 {
            check(b, &[d], "b1")?;
        }
        if let Some(b) = &self.b2 {
            check(b, &[c], "b2")?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.handles().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> SeAdapter<NodeId> {
        self.map(|t| g.param(t.clone()))
    }
}

/// How the DA module forms its mixing vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// `softmax(W_DA · avgpool(X))`.
    #[default]
    Learned,
    /// Uniform `1/N`, ignoring `W_DA`.
    FixedAverage,
    /// One-hot on branch `i`; reproduces a hard-switched bank.
    Forced(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaModule<T> {
    pub adapters: Vec<SeAdapter<T>>,
    /// `N×C`
    pub w_da: T,
    /// Optional `N` bias on the attention logits; absent by default.
    pub b_da: Option<T>,
    pub mode: AttentionMode,
}

pub type DaModuleParams = DaModule<Tensor>;

impl<T> DaModule<T> {
    pub fn num_adapters(&self) -> usize {
        self.adapters.len()
    }

    pub fn channels(&self) -> usize {
        self.adapters.first().map_or(0, |a| a.channels)
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> DaModule<U> {
        DaModule {
            adapters: self.adapters.iter().map(|a| a.map(&mut f)).collect(),
            w_da: f(&self.w_da),
            b_da: self.b_da.as_ref().map(&mut f),
            mode: self.mode,
        }
    }
}

impl DaModuleParams {
    /// `N` freshly initialised adapters and a zero `W_DA`, so a learned
    /// module starts out exactly at the uniform-average mixture.
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        reduction: usize,
        num_adapters: usize,
        with_bias: bool,
        mode: AttentionMode,
        rng: &mut R,
    ) -> Self {
        let adapters = (0..num_adapters)
            .map(|_| SeAdapterParams::init(channels, reduction, with_bias, rng))
            .collect();
        Self {
            adapters,
            w_da: Tensor::zeros([num_adapters, channels]),
            b_da: None,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adapters.len();
        if n == 0 {
            return Err(Error::shape("DA module needs at least one adapter"));
        }
        let c = self.channels();
        for (i, a) in self.adapters.iter().enumerate() {
            a.validate()?;
            if a.channels != c || a.reduction != self.adapters[0].reduction {
                return Err(Error::shape(format!(
                    "adapter {i} has C={}, r={}; bank shares C={c}, r={}",
                    a.channels, a.reduction, self.adapters[0].reduction
                )));
            }
        }
        if self.w_da.shape() != [n, c] {
            return Err(Error::shape(format!(
                "W_DA shape {:?}, expected [{n}, {c}]",
                self.w_da.shape()
            )));
        }
        if let Some(b) = &self.b_da {
            if b.shape() != [n] {
                return Err(Error::shape(format!(
                    "attention bias shape {:?}",
                    b.shape()
                )));
            }
        }
        if let AttentionMode::Forced(i) = self.mode {
            if i >= n {
                return Err(Error::DomainIndex { index: i, len: n });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.adapters.iter().map(|a| a.param_count()).sum::<usize>()
            + self.w_da.numel()
            + self.b_da.as_ref().map_or(0, |b| b.numel())
    }

    pub fn bind(&self, g: &mut Graph) -> DaModule<NodeId> {
        self.map(|t| g.param(t.clone()))
    }
}

/// Excitation from an already pooled `C`-vector.
pub fn excite_pooled(g: &mut Graph, pooled: NodeId, p: &SeAdapter<NodeId>) -> Result<NodeId> {
    let h = g.fully_connected(pooled, p.w1, p.b1)?;
    let h = g.relu(h)?;
    g.fully_connected(h, p.w2, p.b2)
}

fn check_channels(g: &Graph, x: NodeId, channels: usize) -> Result<()> {
    let (c, _, _) = g.value(x).dims3()?;
    if c != channels {
        return Err(Error::shape(format!(
            "adapter built for {channels} channels applied to a {c}-channel map"
        )));
    }
    Ok(())
}

/// `X_SE = W2·relu(W1·avgpool(X) + b1) + b2`, with no gate.
pub fn se_excitation_node(g: &mut Graph, x: NodeId, p: &SeAdapter<NodeId>) -> Result<NodeId> {
    check_channels(g, x, p.channels)?;
    let pooled = g.global_avg_pool(x)?;
    excite_pooled(g, pooled, p)
}

/// Gate applied to an excitation before it rescales channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    #[default]
    Sigmoid,
    /// Raw excitation used as the scale.
    Identity,
}

impl Gate {
    fn apply(self, g: &mut Graph, e: NodeId) -> Result<NodeId> {
        match self {
            Gate::Sigmoid => g.sigmoid(e),
            Gate::Identity => Ok(e),
        }
    }
}

pub fn se_adapter_node(
    g: &mut Graph,
    x: NodeId,
    p: &SeAdapter<NodeId>,
    gate: Gate,
) -> Result<NodeId> {
    let e = se_excitation_node(g, x, p)?;
    let s = gate.apply(g, e)?;
    g.channelwise_scale(x, s)
}

/// Hard switch: only `bank[domain]` is evaluated.
pub fn se_bank_node(
    g: &mut Graph,
    x: NodeId,
    bank: &[SeAdapter<NodeId>],
    domain: usize,
) -> Result<NodeId> {
    let p = bank.get(domain).ok_or(Error::DomainIndex {
        index: domain,
        len: bank.len(),
    })?;
    se_adapter_node(g, x, p, Gate::Sigmoid)
}

fn use_bank_pooled(
    g: &mut Graph,
    pooled: NodeId,
    adapters: &[SeAdapter<NodeId>],
) -> Result<NodeId> {
    let cols = adapters
        .iter()
        .map(|a| excite_pooled(g, pooled, a))
        .collect::<Result<Vec<_>>>()?;
    g.concat_columns(&cols)
}

/// `X_USE = [X_SE^1, …, X_SE^N]`, a `C×N` matrix; every branch is evaluated.
pub fn use_bank_node(g: &mut Graph, x: NodeId, adapters: &[SeAdapter<NodeId>]) -> Result<NodeId> {
    if adapters.is_empty() {
        return Err(Error::shape("universal bank needs at least one adapter"));
    }
    for a in adapters {
        check_channels(g, x, a.channels)?;
    }
    let pooled = g.global_avg_pool(x)?;
    use_bank_pooled(g, pooled, adapters)
}

/// `S_DA = softmax(W_DA · avgpool(X) [+ b])`.
pub fn domain_attention_node(
    g: &mut Graph,
    x: NodeId,
    w_da: NodeId,
    b_da: Option<NodeId>,
) -> Result<NodeId> {
    let pooled = g.global_avg_pool(x)?;
    let logits = g.fully_connected(pooled, w_da, b_da)?;
    g.softmax(logits)
}

/// Output of a DA module evaluation.
#[derive(Clone, Copy, Debug)]
pub struct DaNodes {
    pub output: NodeId,
    /// The `N`-vector that mixed the bank.
    pub attention: NodeId,
    /// `X_USE`, `C×N`.
    pub bank: NodeId,
    /// `X_DA`, length `C`.
    pub mixed: NodeId,
}

pub fn da_module_node(g: &mut Graph, x: NodeId, p: &DaModule<NodeId>) -> Result<DaNodes> {
    let n = p.adapters.len();
    if n == 0 {
        return Err(Error::shape("DA module needs at least one adapter"));
    }
    for a in &p.adapters {
        check_channels(g, x, a.channels)?;
    }
    let pooled = g.global_avg_pool(x)?;
    let bank = use_bank_pooled(g, pooled, &p.adapters)?;
    let attention = match p.mode {
        AttentionMode::Learned => {
            let logits = g.fully_connected(pooled, p.w_da, p.b_da)?;
            g.softmax(logits)?
        }
        AttentionMode::FixedAverage => g.constant(Tensor::full([n], 1.0 / n as f64)),
        AttentionMode::Forced(i) => {
            if i >= n {
                return Err(Error::DomainIndex { index: i, len: n });
            }
            let mut onehot = Tensor::zeros([n]);
            onehot.data_mut()[i] = 1.0;
            g.constant(onehot)
        }
    };
    let mixed = g.fully_connected(attention, bank, None)?;
    let gate = g.sigmoid(mixed)?;
    let output = g.channelwise_scale(x, gate)?;
    Ok(DaNodes {
        output,
        attention,
        bank,
        mixed,
    })
}

// Tensor-level entry points.

fn eval<F>(x: &Tensor, f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let y = f(&mut g, xn)?;
    Ok(g.take_value(y))
}

pub fn se_excitation(x: &Tensor, p: &SeAdapterParams) -> Result<Tensor> {
    eval(x, |g, xn| {
        let pn = p.map(|t| g.constant(t.clone()));
        se_excitation_node(g, xn, &pn)
    })
}

pub fn se_adapter_forward(x: &Tensor, p: &SeAdapterParams) -> Result<Tensor> {
    se_adapter_forward_gated(x, p, Gate::Sigmoid)
}

pub fn se_adapter_forward_gated(x: &Tensor, p: &SeAdapterParams, gate: Gate) -> Result<Tensor> {
    eval(x, |g, xn| {
        let pn = p.map(|t| g.constant(t.clone()));
        se_adapter_node(g, xn, &pn, gate)
    })
}

pub fn se_bank_forward(x: &Tensor, bank: &[SeAdapterParams], domain: usize) -> Result<Tensor> {
    let p = bank.get(domain).ok_or(Error::DomainIndex {
        index: domain,
        len: bank.len(),
    })?;
    se_adapter_forward(x, p)
}

pub fn use_bank_forward(x: &Tensor, adapters: &[SeAdapterParams]) -> Result<Tensor> {
    eval(x, |g, xn| {
        let pn: Vec<_> = adapters
            .iter()
            .map(|a| a.map(|t| g.constant(t.clone())))
            .collect();
        use_bank_node(g, xn, &pn)
    })
}

pub fn domain_attention_weights(x: &Tensor, w_da: &Tensor) -> Result<Tensor> {
    eval(x, |g, xn| {
        let w = g.constant(w_da.clone());
        domain_attention_node(g, xn, w, None)
    })
}

pub fn da_module_forward(x: &Tensor, p: &DaModuleParams) -> Result<Tensor> {
    eval(x, |g, xn| {
        let pn = p.map(|t| g.constant(t.clone()));
        Ok(da_module_node(g, xn, &pn)?.output)
    })
}

/// Closed-form parameter count of `n` adapters on `channels` channels,
/// optionally with the `N×C` attention matrix.
pub fn adapter_param_count(
    channels: usize,
    reduction: usize,
    num_adapters: usize,
    with_attention: bool,
    with_bias: bool,
) -> usize {
    let c = channels;
    let d = hidden_width(channels, reduction);
    let per_adapter = c * d + d * c + if with_bias { d + c } else { 0 };
    num_adapters * per_adapter + if with_attention { num_adapters * c } else { 0 }
}
