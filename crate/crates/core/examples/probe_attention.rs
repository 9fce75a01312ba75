//! Trains briefly, then shows how the mean attention of each DA block
//! differs between domains.

use domattn::data::{generate_domain, most_distant_pair, presets};
use domattn::network::NetworkSpec;
use domattn::trainer::{
    assignment_divergence, probe_model, train, LrStage, ProbeKind, TrainConfig,
};

fn main() -> domattn::Result<()> {
    let datasets = presets::default6()
        .into_iter()
        .map(|mut s| {
            s.sizes.train = 150;
            s.sizes.test = 50;
            generate_domain(&s)
        })
        .collect::<domattn::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        lr_schedule: vec![LrStage {
            epochs: 12,
            lr: 0.02,
        }],
        ..TrainConfig::default()
    };
    let model = train(&cfg, &NetworkSpec::default(), &datasets)?.model;
    let report = probe_model(&model, &datasets, ProbeKind::Attention)?;
    for (d, blocks) in report.assignments.iter().enumerate() {
        for b in blocks {
            let mean: Vec<String> = b.mean.iter().map(|v| format!("{v:.2}")).collect();
            println!(
                "{:<10} {:<14} [{}]",
                report.datasets[d],
                b.block,
                mean.join(" ")
            );
        }
    }
    let (a, b) = most_distant_pair(&datasets).expect("at least two domains");
    for (block, tv) in assignment_divergence(&report, a, b) {
        println!(
            "TV({}, {}) at {block}: {tv:.3}",
            datasets[a].spec.name, datasets[b].spec.name
        );
    }
    Ok(())
}
