//! Saves a freshly built model, reloads it and confirms the predictions
//! match bit for bit.

use domattn::data::{generate_domain, presets};
use domattn::network::NetworkSpec;
use domattn::trainer::{
    build_model, checkpoint_digest, load_checkpoint, save_checkpoint, TrainConfig,
};

fn main() -> domattn::Result<()> {
    let datasets = presets::default6()
        .into_iter()
        .map(|mut s| {
            s.sizes.train = 1;
            s.sizes.test = 4;
            generate_domain(&s)
        })
        .collect::<domattn::Result<Vec<_>>>()?;
    let model = build_model(&TrainConfig::default(), &NetworkSpec::default(), &datasets)?;
    let path = std::env::temp_dir().join("domattn_example_checkpoint.bin");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    println!("digest {}", checkpoint_digest(&model)?);
    for (d, ds) in datasets.iter().enumerate() {
        let x = &ds.test[0].image;
        let (a, b) = (model.predict(x, d)?, back.predict(x, d)?);
        println!(
            "{:<10} label {} score {:.4} identical {}",
            ds.spec.name,
            a.label,
            a.score,
            a == b
        );
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
