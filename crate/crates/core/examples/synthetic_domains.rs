//! Renders the six default domains, prints their style descriptors and
//! writes one PPM image per domain.
//!
//! `cargo run --example synthetic_domains -- out_dir`

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use domattn::data::{generate_domain, most_distant_pair, presets, write_ppm};

fn main() -> domattn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "domains".into()));
    std::fs::create_dir_all(&out)?;
    let sets = presets::default6()
        .into_iter()
        .map(|mut s| {
            s.sizes.train = 40;
            s.sizes.test = 10;
            generate_domain(&s)
        })
        .collect::<domattn::Result<Vec<_>>>()?;
    for ds in &sets {
        let d: Vec<String> = ds
            .style_descriptor()
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect();
        println!(
            "{:<10} classes {:?}  style [{}]  digest {}",
            ds.spec.name,
            ds.spec.classes,
            d.join(" "),
            &ds.digest()[..12]
        );
        let path = out.join(format!("{}.ppm", ds.spec.name));
        write_ppm(&ds.train[0], BufWriter::new(File::create(&path)?))?;
    }
    if let Some((a, b)) = most_distant_pair(&sets) {
        println!(
            "most distant styles: {} and {}",
            sets[a].spec.name, sets[b].spec.name
        );
    }
    println!("images written to {}", out.display());
    Ok(())
}
