#![allow(dead_code)]

use domattn::adapters::{AttentionMode, DaModule, SeAdapter};
use domattn::gradcheck::compare_grads;
use domattn::network::{
    BlockKind, ConvSpec, DaPlacement, FreezeMask, HeadKind, HeadSpec, Insertion, Network,
    NetworkSpec, StageSpec,
};
use domattn::{Graph, NodeId, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
/// Reference magnitudes below this are judged on absolute error.
pub const SMALL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;
/// Smallest step tried when the `±h` stencil straddles a kink.
const MIN_H: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, &mut rng(seed))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_rel: f64,
    pub max_abs_small: f64,
    pub checked: usize,
    /// Coordinates checked with a step below `H` to stay on one linear piece.
    pub refined: usize,
    /// Coordinates sitting on a kink even at the smallest step.
    pub skipped: usize,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.max_rel < REL_TOL && self.max_abs_small < ABS_TOL && self.checked > 0
    }

    pub fn merge(self, o: GradReport) -> GradReport {
        GradReport {
            max_rel: self.max_rel.max(o.max_rel),
            max_abs_small: self.max_abs_small.max(o.max_abs_small),
            checked: self.checked + o.checked,
            refined: self.refined + o.refined,
            skipped: self.skipped + o.skipped,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        let c = compare_grads(&[analytic], &[numeric], SMALL);
        self.max_rel = self.max_rel.max(c.max_rel);
        self.max_abs_small = self.max_abs_small.max(c.max_abs_small);
        self.checked += 1;
    }
}

/// Central difference of `f` along one coordinate, shrinking the step until
/// both stencil points share the kink signature of the centre.
fn central<F>(
    f: &mut F,
    x: &mut [f64],
    j: usize,
    centre: &[bool],
    report: &mut GradReport,
) -> Option<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<bool>),
{
    let orig = x[j];
    let mut h = H;
    while h >= MIN_H {
        x[j] = orig + h;
        let (fp, sp) = f(x);
        x[j] = orig - h;
        let (fm, sm) = f(x);
        x[j] = orig;
        if sp == centre && sm == centre {
            if h < H {
                report.refined += 1;
            }
            return Some((fp - fm) / (2.0 * h));
        }
        h /= 10.0;
    }
    report.skipped += 1;
    None
}

type Build<'a> = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'a;

/// Scalar objective of `build`: the output itself, or its projection on a
/// fixed random direction.
fn objective(
    build: &Build<'_>,
    inputs: &[Tensor],
    seed: u64,
    track: bool,
) -> (Graph, Vec<NodeId>, NodeId) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
    let y = build(&mut g, &ids).expect("op under test");
    let loss = if g.value(y).is_scalar() {
        y
    } else {
        let n = g.value(y).numel();
        let flat = g.gather(y, (0..n).collect()).unwrap();
        let dir = uniform(&[1, n], -1.0, 1.0, seed ^ 0xd1ec);
        let d = g.constant(dir);
        let p = g.fully_connected(flat, d, None).unwrap();
        g.sum(p).unwrap()
    };
    (g, ids, loss)
}

/// Checks the gradient of `build` with respect to every element of every input.
pub fn check_op(inputs: &[Tensor], seed: u64, build: &Build<'_>) -> GradReport {
    let (mut g, ids, loss) = objective(build, inputs, seed, true);
    let centre = g.kink_signature();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            g.grad(id)
                .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
        })
        .collect();
    let mut report = GradReport::default();
    for (i, input) in inputs.iter().enumerate() {
        let mut f = |x: &[f64]| {
            let mut ins = inputs.to_vec();
            ins[i] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            let (g, _, l) = objective(build, &ins, seed, false);
            (g.value(l).item().unwrap(), g.kink_signature())
        };
        let mut x = input.data().to_vec();
        for j in 0..x.len() {
            if let Some(fd) = central(&mut f, &mut x, j, &centre, &mut report) {
                report.add(analytic[i][j], fd);
            }
        }
    }
    report
}

/// SE adapter whose tensors are consecutive graph inputs `w1, b1, w2, b2`.
pub fn adapter_from(ids: &[NodeId], channels: usize, reduction: usize) -> SeAdapter<NodeId> {
    SeAdapter {
        channels,
        reduction,
        w1: ids[0],
        b1: Some(ids[1]),
        w2: ids[2],
        b2: Some(ids[3]),
    }
}

/// Random adapter tensors `w1, b1, w2, b2`.
pub fn adapter_tensors(c: usize, d: usize, seed: u64) -> Vec<Tensor> {
    vec![
        uniform(&[d, c], -1.0, 1.0, seed),
        uniform(&[d], -0.5, 0.5, seed + 1),
        uniform(&[c, d], -1.0, 1.0, seed + 2),
        uniform(&[c], -0.5, 0.5, seed + 3),
    ]
}

pub fn da_from(ids: &[NodeId], channels: usize, reduction: usize, n: usize) -> DaModule<NodeId> {
    DaModule {
        adapters: (0..n)
            .map(|i| adapter_from(&ids[4 * i..], channels, reduction))
            .collect(),
        w_da: ids[4 * n],
        b_da: None,
        mode: AttentionMode::Learned,
    }
}

/// Two basic residual blocks on 8×8 inputs, a DA module after each, one
/// classification head.
pub fn two_block_da_spec(num_adapters: usize) -> NetworkSpec {
    NetworkSpec {
        in_channels: 3,
        input_size: 8,
        stem: ConvSpec {
            out_channels: 4,
            kernel: 3,
            stride: 1,
        },
        stages: vec![StageSpec {
            blocks: 2,
            channels: 8,
            stride: 1,
        }],
        block: BlockKind::Basic,
        insertion_policy: vec![Insertion::DaModule; 2],
        da_placement: DaPlacement::All,
        num_adapters,
        reduction: 4,
        heads: vec![HeadSpec {
            task_id: 0,
            kind: HeadKind::Classification { num_classes: 3 },
        }],
        freeze: FreezeMask::NONE,
        ..NetworkSpec::default()
    }
}

/// Cross-entropy gradient of every parameter of `net` on one image.
pub fn check_network(net: &Network, image: &Tensor, label: usize) -> GradReport {
    let eval = |n: &Network, track: bool| {
        let mut g = Graph::new();
        let bound = n.bind(&mut g, track);
        let x = g.constant(image.clone());
        let t = n.forward_graph(&mut g, &bound, x, 0, None).unwrap();
        let l = g.softmax_cross_entropy(t.output, label).unwrap();
        (g, bound, l)
    };
    let (mut g, bound, loss) = eval(net, true);
    let centre = g.kink_signature();
    g.backward(loss).unwrap();
    let mut report = GradReport::default();
    for id in net.param_ids() {
        let analytic = g
            .grad(bound.node(id))
            .expect("every parameter is reachable")
            .to_vec();
        let shape = net.params()[id.index()].tensor.shape().to_vec();
        let mut f = |x: &[f64]| {
            let mut n = net.clone();
            n.params_mut()[id.index()].tensor = Tensor::new(shape.clone(), x.to_vec()).unwrap();
            let (g, _, l) = eval(&n, false);
            (g.value(l).item().unwrap(), g.kink_signature())
        };
        let mut x = net.params()[id.index()].tensor.data().to_vec();
        for j in 0..x.len() {
            if let Some(fd) = central(&mut f, &mut x, j, &centre, &mut report) {
                report.add(analytic[j], fd);
            }
        }
    }
    report
}

/// Network with the DA attention matrices drawn away from zero so the
/// attention path carries gradient.
pub fn random_da_network(seed: u64) -> Network {
    let mut net = Network::build(&two_block_da_spec(3), seed).unwrap();
    let mut r = rng(seed ^ 0xa77e);
    for p in net.params_mut() {
        if p.name.ends_with("w_da")
            || p.name.ends_with("bias")
            || p.name.ends_with("b1")
            || p.name.ends_with("b2")
        {
            p.tensor = Tensor::uniform(p.tensor.shape().to_vec(), -0.5, 0.5, &mut r);
        }
    }
    net
}

/// Reference `Cout×H'×W'` convolution by direct summation.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, ks) = (k.shape()[0], k.shape()[2]);
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b.map_or(0.0, |b| b.data()[o]);
                for i in 0..cin {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xx * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.data()[(i * h + iy as usize) * w + ix as usize]
                                * k.data()[((o * cin + i) * ks + ky) * ks + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Tensor::new(vec![cout, oh, ow], out).unwrap()
}

/// Every differentiable op of the graph and the adapter layers.
pub const OPS: &[&str] = &[
    "global_avg_pool",
    "avg_pool",
    "fully_connected",
    "softmax",
    "sigmoid",
    "relu",
    "add",
    "add_all",
    "concat_columns",
    "channelwise_scale",
    "conv2d_stride1_pad1",
    "conv2d_stride2_pad1",
    "conv2d_pointwise",
    "gather",
    "sum",
    "scale",
    "mean",
    "softmax_cross_entropy",
    "bce_with_logits",
    "l1",
    "se_adapter",
    "se_bank",
    "use_bank",
    "domain_attention",
    "da_module",
];

fn with_adapters(mut inputs: Vec<Tensor>, n: usize, seed: u64) -> Vec<Tensor> {
    for i in 0..n {
        inputs.extend(adapter_tensors(8, 2, seed * 31 + 10 * i as u64));
    }
    inputs
}

pub fn check_named_op(name: &str, seed: u64) -> GradReport {
    use domattn::adapters::{
        da_module_node, domain_attention_node, se_adapter_node, se_bank_node, use_bank_node, Gate,
    };
    let s = seed * 1000;
    let u = |shape: &[usize], k: u64| uniform(shape, -1.0, 1.0, s + k);
    match name {
        "global_avg_pool" => check_op(&[u(&[3, 4, 5], 0)], seed, &|g, x| g.global_avg_pool(x[0])),
        "avg_pool" => check_op(&[u(&[2, 4, 6], 0)], seed, &|g, x| g.avg_pool(x[0], 2)),
        "fully_connected" => check_op(&[u(&[5], 0), u(&[4, 5], 1), u(&[4], 2)], seed, &|g, x| {
            g.fully_connected(x[0], x[1], Some(x[2]))
        }),
        "softmax" => check_op(&[uniform(&[6], -3.0, 3.0, s)], seed, &|g, x| {
            g.softmax(x[0])
        }),
        "sigmoid" => check_op(&[uniform(&[3, 2, 2], -3.0, 3.0, s)], seed, &|g, x| {
            g.sigmoid(x[0])
        }),
        "relu" => check_op(&[u(&[3, 3, 3], 0)], seed, &|g, x| g.relu(x[0])),
        "add" => check_op(&[u(&[2, 3, 3], 0), u(&[2, 3, 3], 1)], seed, &|g, x| {
            g.add(x[0], x[1])
        }),
        "add_all" => check_op(&[u(&[4], 0), u(&[4], 1), u(&[4], 2)], seed, &|g, x| {
            g.add_all(x)
        }),
        "concat_columns" => check_op(&[u(&[5], 0), u(&[5], 1), u(&[5], 2)], seed, &|g, x| {
            g.concat_columns(x)
        }),
        "channelwise_scale" => check_op(&[u(&[3, 4, 4], 0), u(&[3], 1)], seed, &|g, x| {
            g.channelwise_scale(x[0], x[1])
        }),
        "conv2d_stride1_pad1" => check_op(
            &[u(&[2, 6, 6], 0), u(&[3, 2, 3, 3], 1), u(&[3], 2)],
            seed,
            &|g, x| g.conv2d(x[0], x[1], Some(x[2]), 1, 1),
        ),
        "conv2d_stride2_pad1" => check_op(
            &[u(&[2, 7, 7], 0), u(&[3, 2, 3, 3], 1), u(&[3], 2)],
            seed,
            &|g, x| g.conv2d(x[0], x[1], Some(x[2]), 2, 1),
        ),
        "conv2d_pointwise" => check_op(&[u(&[4, 5, 5], 0), u(&[2, 4, 1, 1], 1)], seed, &|g, x| {
            g.conv2d(x[0], x[1], None, 1, 0)
        }),
        "gather" => check_op(&[u(&[3, 4], 0)], seed, &|g, x| {
            g.gather(x[0], vec![0, 5, 5, 11, 2])
        }),
        "sum" => check_op(&[u(&[7], 0)], seed, &|g, x| g.sum(x[0])),
        "scale" => check_op(&[u(&[2, 3], 0)], seed, &|g, x| g.scale(x[0], 2.5)),
        "mean" => check_op(&[u(&[7], 0)], seed, &|g, x| g.mean(x[0])),
        "softmax_cross_entropy" => {
            let target = (seed % 5) as usize;
            check_op(&[uniform(&[5], -3.0, 3.0, s)], seed, &move |g, x| {
                g.softmax_cross_entropy(x[0], target)
            })
        }
        "bce_with_logits" => {
            let t: Vec<f64> = uniform(&[6], 0.0, 1.0, s + 9)
                .data()
                .iter()
                .map(|v| v.round())
                .collect();
            check_op(&[uniform(&[6], -3.0, 3.0, s)], seed, &move |g, x| {
                g.bce_with_logits(x[0], t.clone())
            })
        }
        "l1" => {
            let t = uniform(&[6], -1.0, 1.0, s + 9).into_data();
            check_op(&[u(&[6], 0)], seed, &move |g, x| g.l1(x[0], t.clone()))
        }
        "se_adapter" => check_op(
            &with_adapters(vec![u(&[8, 3, 3], 0)], 1, seed),
            seed,
            &|g, x| se_adapter_node(g, x[0], &adapter_from(&x[1..], 8, 4), Gate::Sigmoid),
        ),
        "se_bank" => {
            let d = (seed % 2) as usize;
            check_op(
                &with_adapters(vec![u(&[8, 3, 3], 0)], 2, seed),
                seed,
                &move |g, x| {
                    let bank = [adapter_from(&x[1..], 8, 4), adapter_from(&x[5..], 8, 4)];
                    se_bank_node(g, x[0], &bank, d)
                },
            )
        }
        "use_bank" => check_op(
            &with_adapters(vec![u(&[8, 3, 3], 0)], 3, seed),
            seed,
            &|g, x| {
                let bank: Vec<_> = (0..3)
                    .map(|i| adapter_from(&x[1 + 4 * i..], 8, 4))
                    .collect();
                use_bank_node(g, x[0], &bank)
            },
        ),
        "domain_attention" => check_op(
            &[u(&[8, 3, 3], 0), uniform(&[3, 8], -2.0, 2.0, s + 1)],
            seed,
            &|g, x| domain_attention_node(g, x[0], x[1], None),
        ),
        "da_module" => {
            let mut inputs = with_adapters(vec![u(&[8, 3, 3], 0)], 3, seed);
            inputs.push(uniform(&[3, 8], -2.0, 2.0, s + 1));
            check_op(&inputs, seed, &|g, x| {
                Ok(da_module_node(g, x[0], &da_from(&x[1..], 8, 4, 3))?.output)
            })
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Small two-stage backbone for 32×32 inputs, fast enough for training tests.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        stem: ConvSpec {
            out_channels: 4,
            kernel: 3,
            stride: 2,
        },
        stages: vec![
            StageSpec {
                blocks: 1,
                channels: 8,
                stride: 1,
            },
            StageSpec {
                blocks: 1,
                channels: 8,
                stride: 2,
            },
        ],
        block: BlockKind::Basic,
        reduction: 4,
        ..NetworkSpec::default()
    }
}

/// The first `count` default domains with the given split sizes.
pub fn domains(count: usize, train: usize, test: usize) -> Vec<domattn::data::DomainDataset> {
    domattn::data::presets::default6()
        .into_iter()
        .take(count)
        .map(|mut s| {
            s.sizes.train = train;
            s.sizes.val = 0;
            s.sizes.test = test;
            domattn::data::generate_domain(&s).unwrap()
        })
        .collect()
}

/// DA module with random attention weights and biases, reduction 4.
pub fn random_da(
    c: usize,
    n: usize,
    seed: u64,
    mode: AttentionMode,
) -> domattn::adapters::DaModuleParams {
    let mut r = rng(seed);
    let mut p = domattn::adapters::DaModuleParams::init(c, 4, n, true, mode, &mut r);
    p.w_da = Tensor::uniform([n, c], -2.0, 2.0, &mut r);
    for a in &mut p.adapters {
        a.b1 = Some(Tensor::uniform([a.hidden()], -0.5, 0.5, &mut r));
        a.b2 = Some(Tensor::uniform([c], -0.5, 0.5, &mut r));
    }
    p
}
