//! Trains a universal network with domain attention on three small domains
//! and prints the per-epoch log.

use domattn::data::{generate_domain, presets};
use domattn::network::NetworkSpec;
use domattn::trainer::{train, Architecture, LrStage, TrainConfig};

fn main() -> domattn::Result<()> {
    let datasets = presets::default6()
        .into_iter()
        .take(3)
        .map(|mut s| {
            s.sizes.train = 150;
            s.sizes.test = 100;
            generate_domain(&s)
        })
        .collect::<domattn::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        architecture: Architecture::UniversalDa,
        lr_schedule: vec![
            LrStage {
                epochs: 12,
                lr: 0.02,
            },
            LrStage {
                epochs: 2,
                lr: 0.002,
            },
        ],
        eval_every: 2,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &NetworkSpec::default(), &datasets)?;
    print!("{}", out.log.csv_string()?);
    let s = out.log.summary.expect("summary after training");
    println!(
        "average metric {:.3}, adapter overhead {:.1}%",
        s.average_metric,
        100.0 * s.adapter_overhead
    );
    Ok(())
}
