use domattn::adapters::adapter_param_count;
use domattn::data::presets;
use domattn::network::{HeadKind, Insertion, Network, NetworkSpec, ParamSummary};
use domattn::trainer::{Architecture, Task};

fn heads() -> Vec<HeadKind> {
    presets::default6()
        .iter()
        .map(|d| Task::Classification.head(d.classes.len()))
        .collect()
}

fn summary(arch: Architecture, n: Option<usize>) -> ParamSummary {
    arch.member_specs(&NetworkSpec::default(), &heads(), n)
        .iter()
        .map(|s| Network::build(s, 0).unwrap().param_summary())
        .fold(ParamSummary::default(), |a, b| a + b)
}

/// Output channels of every block, in order.
fn block_channels(spec: &NetworkSpec) -> Vec<usize> {
    spec.stages
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.channels, s.blocks))
        .collect()
}

#[test]
fn partitions_add_up() {
    for arch in Architecture::ALL {
        let s = summary(arch, None);
        assert_eq!(s.total, s.shared + s.adapters + s.heads, "{arch}");
    }
}

#[test]
fn architectures_are_strictly_ordered_by_size() {
    let bank = summary(Architecture::Bank, None).total;
    let adaptive = summary(Architecture::Adaptive, None).total;
    let da = summary(Architecture::UniversalDa, None).total;
    let universal = summary(Architecture::Universal, None).total;
    assert!(
        bank > adaptive && adaptive > da && da > universal,
        "{bank} {adaptive} {da} {universal}"
    );
    assert_eq!(
        summary(Architecture::UniversalDaFixed, None),
        summary(Architecture::UniversalDa, None)
    );
    assert_eq!(summary(Architecture::Universal, None).adapters, 0);
}

#[test]
fn adapter_partition_matches_closed_form() {
    let base = NetworkSpec::default();
    let (r, bias) = (base.reduction, base.adapter_bias);
    let channels = block_channels(&base);
    for n in 1..=6 {
        let spec = &Architecture::UniversalDa.member_specs(&base, &heads(), Some(n))[0];
        let expected: usize = spec
            .effective_insertions()
            .iter()
            .zip(&channels)
            .map(|(ins, &c)| match ins {
                Insertion::DaModule => adapter_param_count(c, r, n, true, bias),
                Insertion::SingleSe => adapter_param_count(c, r, 1, false, bias),
                other => panic!("unexpected insertion {other:?}"),
            })
            .sum();
        assert_eq!(
            summary(Architecture::UniversalDa, Some(n)).adapters,
            expected,
            "N={n}"
        );
    }
    let adaptive: usize = channels
        .iter()
        .map(|&c| adapter_param_count(c, r, 6, false, bias))
        .sum();
    assert_eq!(summary(Architecture::Adaptive, None).adapters, adaptive);
}

#[test]
fn adapter_count_grows_linearly_in_n() {
    let counts: Vec<usize> = (1..=9)
        .map(|n| summary(Architecture::UniversalDa, Some(n)).total)
        .collect();
    let step = counts[1] - counts[0];
    assert!(step > 0);
    for w in counts.windows(2) {
        assert_eq!(w[1] - w[0], step);
    }
}

#[test]
fn single_se_overhead_is_modest() {
    let spec = NetworkSpec {
        heads: vec![],
        ..NetworkSpec::default()
    }
    .with_classification_heads(&[4])
    .with_insertion(Insertion::SingleSe);
    let s = Network::build(&spec, 0).unwrap().param_summary();
    let ratio = s.adapter_overhead();
    assert!((0.05..=0.20).contains(&ratio), "{ratio}");
}

#[test]
fn relative_cost_counts_forward_passes() {
    assert_eq!(Architecture::Bank.relative_cost(6), 6);
    assert_eq!(Architecture::Adaptive.relative_cost(6), 6);
    assert_eq!(Architecture::UniversalDa.relative_cost(6), 1);
}
