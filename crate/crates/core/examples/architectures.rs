//! Builds every architecture on the default backbone and prints parameter
//! accounting and inference cost.

use domattn::data::presets;
use domattn::network::{Network, NetworkSpec};
use domattn::trainer::{Architecture, Task};

fn main() -> domattn::Result<()> {
    let heads: Vec<_> = presets::default6()
        .iter()
        .map(|d| Task::Classification.head(d.classes.len()))
        .collect();
    let base = NetworkSpec::default();
    println!(
        "{:<20} {:>8} {:>8} {:>8} {:>6} {:>6}",
        "architecture", "total", "shared", "adapter", "heads", "cost"
    );
    for arch in Architecture::ALL {
        let nets = arch
            .member_specs(&base, &heads, None)
            .iter()
            .map(|s| Network::build(s, 0))
            .collect::<domattn::Result<Vec<_>>>()?;
        let s = nets.iter().map(|n| n.param_summary()).fold(
            Default::default(),
            |a: domattn::network::ParamSummary, b| a + b,
        );
        println!(
            "{:<20} {:>8} {:>8} {:>8} {:>6} {:>6}",
            arch.name(),
            s.total,
            s.shared,
            s.adapters,
            s.heads,
            arch.relative_cost(heads.len())
        );
        if arch == Architecture::UniversalDa {
            println!("  DA blocks: {}", nets[0].da_blocks().join(", "));
        }
    }
    Ok(())
}
