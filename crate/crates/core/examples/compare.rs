//! A reduced architecture comparison: two seeds, short schedule, small
//! splits. Fans out over `DOMATTN_THREADS` workers.

use domattn::data::{generate_domain, presets};
use domattn::network::NetworkSpec;
use domattn::trainer::{
    compare_architectures, worker_threads, Architecture, CompareConfig, LrStage, TrainConfig,
};

fn main() -> domattn::Result<()> {
    let datasets = presets::default6()
        .into_iter()
        .take(3)
        .map(|mut s| {
            s.sizes.train = 100;
            s.sizes.test = 100;
            generate_domain(&s)
        })
        .collect::<domattn::Result<Vec<_>>>()?;
    let cmp_cfg = CompareConfig {
        architectures: vec![
            Architecture::Universal,
            Architecture::UniversalDa,
            Architecture::Adaptive,
        ],
        seeds: vec![0, 1],
        adapter_sweep: vec![1, 2],
    };
    let template = TrainConfig {
        lr_schedule: vec![
            LrStage {
                epochs: 8,
                lr: 0.02,
            },
            LrStage {
                epochs: 2,
                lr: 0.002,
            },
        ],
        ..TrainConfig::default()
    };
    let cmp = compare_architectures(
        &cmp_cfg,
        &template,
        &NetworkSpec::default(),
        &datasets,
        worker_threads(),
    )?;
    let mut buf = Vec::new();
    cmp.write_summary_csv(&mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}
